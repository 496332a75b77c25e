use nalgebra::{DMatrix, DVector};

use super::{argmax_row, DiscreteMdp, NonstationaryPolicy, StationaryPolicy, ValueVector};
use crate::{Error, Result};

/// Sup-norm stopping tolerance of value iteration.
pub const VALUE_ITERATION_TOL: f64 = 1e-9;
pub const VALUE_ITERATION_MAX_SWEEPS: usize = 100_000;

const LINEAR_SOLVE_MAX_STATES: usize = 2000;

/// `(B^π V)(s) = r̄(s,π) + γ Σ_{s'} P^π(s'|s) V(s')`.
pub fn bellman_backup(
    mdp: &DiscreteMdp,
    policy: &StationaryPolicy,
    v_next: &ValueVector,
) -> Result<ValueVector> {
    let q = q_values(mdp, v_next)?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension("policy does not match MDP".into()));
    }
    Ok(DVector::from_fn(mdp.n_states(), |s, _| {
        (0..mdp.n_actions()).map(|a| policy.prob(s, a) * q[(s, a)]).sum()
    }))
}

/// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) V(s')` as an `S × A` table.
pub fn q_values(mdp: &DiscreteMdp, v_next: &ValueVector) -> Result<DMatrix<f64>> {
    if v_next.len() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "value vector has length {}, MDP has {} states",
            v_next.len(),
            mdp.n_states()
        )));
    }
    let pv = mdp.transition_matrix() * v_next;
    let mut q = mdp.reward_table().clone();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            q[(s, a)] += mdp.discount() * pv[mdp.row_index(s, a)];
        }
    }
    Ok(q)
}

/// Infinite-horizon value of a stationary policy.
///
/// Solves `(I − γP^π) V = r̄^π` directly for up to 2000 states and iterates
/// the Bellman operator to tolerance otherwise.
pub fn exact_policy_value(mdp: &DiscreteMdp, policy: &StationaryPolicy) -> Result<ValueVector> {
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_transition(policy)?;
    let n = mdp.n_states();
    let gamma = mdp.discount();
    if n <= LINEAR_SOLVE_MAX_STATES {
        let a = DMatrix::<f64>::identity(n, n) - p * gamma;
        let v = a
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Singular("(I - γP^π) is singular".into()))?;
        return Ok(v);
    }
    let mut v = DVector::zeros(n);
    for _ in 0..VALUE_ITERATION_MAX_SWEEPS {
        let next = &r + (&p * &v) * gamma;
        let diff = (&next - &v).amax();
        v = next;
        if diff <= 1e-10 * (1.0 - gamma) {
            break;
        }
    }
    Ok(v)
}

/// Optimal stationary policy and value by value iteration.
pub fn exact_optimal(mdp: &DiscreteMdp) -> (StationaryPolicy, ValueVector) {
    let mut v = DVector::zeros(mdp.n_states());
    for _ in 0..VALUE_ITERATION_MAX_SWEEPS {
        let q = q_values(mdp, &v).expect("dimensions agree");
        let next = DVector::from_fn(mdp.n_states(), |s, _| q[(s, argmax_row(&q, s))]);
        let diff = (&next - &v).amax();
        v = next;
        if diff <= VALUE_ITERATION_TOL {
            break;
        }
    }
    // Polish with policy iteration so the values are exact, not VI-accurate.
    let mut policy = StationaryPolicy::greedy(&q_values(mdp, &v).expect("dimensions agree"));
    for _ in 0..POLICY_ITERATION_MAX_STEPS {
        v = exact_policy_value(mdp, &policy).expect("dimensions agree");
        let q = q_values(mdp, &v).expect("dimensions agree");
        let improved = (0..mdp.n_states()).any(|s| {
            let a = argmax_row(&q, s);
            q[(s, a)] > q[(s, policy.mode(s))] + POLICY_IMPROVEMENT_TOL * (1.0 + v[s].abs())
        });
        if !improved {
            break;
        }
        policy = StationaryPolicy::greedy(&q);
    }
    (policy, v)
}

const POLICY_ITERATION_MAX_STEPS: usize = 100;
const POLICY_IMPROVEMENT_TOL: f64 = 1e-12;

/// Finite-horizon backwards induction with `V_{T+1} = 0`.
///
/// Returns `(π_1, …, π_T)` and `(V_1, …, V_{T+1})`.
pub fn backwards_induction(
    mdp: &DiscreteMdp,
    horizon: usize,
) -> Result<(NonstationaryPolicy, Vec<ValueVector>)> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let mut values = vec![DVector::zeros(mdp.n_states()); horizon + 1];
    let mut policies = Vec::with_capacity(horizon);
    for i in (0..horizon).rev() {
        let q = q_values(mdp, &values[i + 1])?;
        let pi = StationaryPolicy::greedy(&q);
        values[i] = DVector::from_fn(mdp.n_states(), |s, _| q[(s, argmax_row(&q, s))]);
        policies.push(pi);
    }
    policies.reverse();
    Ok((NonstationaryPolicy::new(policies)?, values))
}

/// Long-run average reward of a policy, `d·r̄^π` for the stationary
/// distribution `d` of `P^π`.
///
/// The chain is assumed to have a single recurrent class.
pub fn average_reward(mdp: &DiscreteMdp, policy: &StationaryPolicy) -> Result<f64> {
    let r = mdp.policy_reward(policy)?;
    let p = mdp.policy_transition(policy)?;
    let n = mdp.n_states();
    // dᵀ(P − I) = 0 with one balance equation swapped for Σ d = 1.
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let d = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary distribution is not unique".into()))?;
    Ok(d.dot(&r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn chain2(gamma: f64) -> DiscreteMdp {
        // P(1|0) = 1, P(1|1) = 1, r = (1, 0).
        DiscreteMdp::from_tables(2, 1, &[0.0, 1.0, 0.0, 1.0], &[1.0, 0.0], gamma).unwrap()
    }

    fn random_mdp(rng: &mut impl Rng, n: usize, m: usize, gamma: f64) -> DiscreteMdp {
        let mut p = Vec::with_capacity(n * m * n);
        for _ in 0..n * m {
            let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = row.iter().sum();
            p.extend(row.iter().map(|x| x / sum));
        }
        let r: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        DiscreteMdp::from_tables(n, m, &p, &r, gamma).unwrap()
    }

    fn random_policy(rng: &mut impl Rng, n: usize, m: usize) -> StationaryPolicy {
        let mut t = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
            let sum: f64 = row.iter().sum();
            t.extend(row.iter().map(|x| x / sum));
        }
        StationaryPolicy::new(n, m, t).unwrap()
    }

    #[test]
    fn zero_value_backup_is_policy_reward() {
        let mut rng = crate::seeded_rng(1, 0);
        let mdp = random_mdp(&mut rng, 4, 3, 0.99);
        let pi = random_policy(&mut rng, 4, 3);
        let v = bellman_backup(&mdp, &pi, &DVector::zeros(4)).unwrap();
        assert_relative_eq!(v, mdp.policy_reward(&pi).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn discount_free_backup_ignores_value() {
        let mut rng = crate::seeded_rng(2, 0);
        let mdp = random_mdp(&mut rng, 3, 2, 0.0);
        let pi = random_policy(&mut rng, 3, 2);
        let v = DVector::from_vec(vec![5.0, -3.0, 100.0]);
        let b = bellman_backup(&mdp, &pi, &v).unwrap();
        assert_relative_eq!(b, mdp.policy_reward(&pi).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn two_state_chain_backups() {
        let mdp = chain2(0.5);
        let pi = StationaryPolicy::uniform(2, 1);
        let v1 = bellman_backup(&mdp, &pi, &DVector::zeros(2)).unwrap();
        assert_eq!(v1.as_slice(), &[1.0, 0.0]);
        let v2 = bellman_backup(&mdp, &pi, &v1).unwrap();
        assert_eq!(v2.as_slice(), &[1.0, 0.0]);
        let exact = exact_policy_value(&mdp, &pi).unwrap();
        assert_relative_eq!(exact, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn backup_rejects_dimension_mismatch() {
        let mdp = chain2(0.5);
        let pi = StationaryPolicy::uniform(2, 1);
        assert!(matches!(
            bellman_backup(&mdp, &pi, &DVector::zeros(3)),
            Err(Error::Dimension(_))
        ));
        let wrong = StationaryPolicy::uniform(3, 1);
        assert!(bellman_backup(&mdp, &wrong, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn self_loop_geometric_series() {
        let c = 3.0;
        let gamma = 0.9;
        let mdp = DiscreteMdp::from_tables(1, 1, &[1.0], &[c], gamma).unwrap();
        let v = exact_policy_value(&mdp, &StationaryPolicy::uniform(1, 1)).unwrap();
        assert_relative_eq!(v[0], c / (1.0 - gamma), epsilon = 1e-10);
    }

    #[test]
    fn single_action_optimum_equals_policy_value() {
        let mut rng = crate::seeded_rng(4, 0);
        let mdp = random_mdp(&mut rng, 5, 1, 0.95);
        let (pi, v) = exact_optimal(&mdp);
        let exact = exact_policy_value(&mdp, &pi).unwrap();
        assert_relative_eq!(v, exact, epsilon = 1e-7);
    }

    #[test]
    fn dominant_action_chosen() {
        let mdp = DiscreteMdp::from_tables(1, 2, &[1.0, 1.0], &[0.0, 1.0], 0.9).unwrap();
        let (pi, _) = exact_optimal(&mdp);
        assert_eq!(pi.actions().unwrap(), vec![1]);
    }

    #[test]
    fn horizon_one_is_greedy_on_reward() {
        let mut rng = crate::seeded_rng(5, 0);
        let mdp = random_mdp(&mut rng, 4, 3, 0.99);
        let (pi, values) = backwards_induction(&mdp, 1).unwrap();
        let expected = StationaryPolicy::greedy(mdp.reward_table());
        assert_eq!(pi.first(), &expected);
        assert_eq!(values.len(), 2);
        assert!(values[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mdp =
            DiscreteMdp::from_tables(2, 2, &[0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.3, 0.7], &[0.0; 4], 0.9)
                .unwrap();
        let (pi, values) = backwards_induction(&mdp, 7).unwrap();
        assert_eq!(pi.horizon(), 7);
        assert!(values.iter().all(|v| v.iter().all(|&x| x == 0.0)));
        assert_eq!(pi.first().actions().unwrap(), vec![0, 0]);
    }

    #[test]
    fn long_horizon_matches_stationary_optimum() {
        let mut rng = crate::seeded_rng(6, 0);
        let mdp = random_mdp(&mut rng, 6, 3, 0.9);
        let (pi_star, v_star) = exact_optimal(&mdp);
        let (pi, values) = backwards_induction(&mdp, 400).unwrap();
        assert_eq!(pi.first(), &pi_star);
        assert_relative_eq!(values[0], v_star, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn bellman_operator_is_a_contraction(seed in 0u64..10_000) {
            let mut rng = crate::seeded_rng(seed, 0);
            let gamma = rng.random_range(0.0..0.999);
            let mdp = random_mdp(&mut rng, 5, 3, gamma);
            let pi = random_policy(&mut rng, 5, 3);
            let v1 = DVector::from_fn(5, |_, _| rng.random_range(-100.0..100.0));
            let v2 = DVector::from_fn(5, |_, _| rng.random_range(-100.0..100.0));
            let b1 = bellman_backup(&mdp, &pi, &v1).unwrap();
            let b2 = bellman_backup(&mdp, &pi, &v2).unwrap();
            prop_assert!((b1 - b2).amax() <= gamma * (v1 - v2).amax() + 1e-12);
        }

        #[test]
        fn policy_value_is_a_fixed_point(seed in 0u64..10_000) {
            let mut rng = crate::seeded_rng(seed, 1);
            let mdp = random_mdp(&mut rng, 6, 2, 0.99);
            let pi = random_policy(&mut rng, 6, 2);
            let v = exact_policy_value(&mdp, &pi).unwrap();
            let bv = bellman_backup(&mdp, &pi, &v).unwrap();
            prop_assert!((bv - v).amax() <= 1e-7);
        }

        #[test]
        fn bellman_operator_is_monotone(seed in 0u64..10_000) {
            let mut rng = crate::seeded_rng(seed, 2);
            let mdp = random_mdp(&mut rng, 4, 3, 0.95);
            let pi = random_policy(&mut rng, 4, 3);
            let v1 = DVector::from_fn(4, |_, _| rng.random_range(-10.0..10.0));
            let v2 = v1.map(|x| x + rng.random_range(0.0..5.0));
            let b1 = bellman_backup(&mdp, &pi, &v1).unwrap();
            let b2 = bellman_backup(&mdp, &pi, &v2).unwrap();
            for s in 0..4 {
                prop_assert!(b1[s] <= b2[s] + 1e-12);
            }
        }
    }

    #[test]
    fn optimum_dominates_random_policies() {
        let mut rng = crate::seeded_rng(7, 0);
        let mdp = random_mdp(&mut rng, 6, 3, 0.97);
        let (pi_star, v_star) = exact_optimal(&mdp);
        let q = q_values(&mdp, &v_star).unwrap();
        for s in 0..6 {
            let best = (0..3).map(|a| q[(s, a)]).fold(f64::MIN, f64::max);
            assert!((v_star[s] - best).abs() <= 1e-7, "Bellman optimality");
        }
        assert!((exact_policy_value(&mdp, &pi_star).unwrap() - &v_star).amax() <= 1e-7);
        for _ in 0..100 {
            let pi = random_policy(&mut rng, 6, 3);
            let v = exact_policy_value(&mdp, &pi).unwrap();
            for s in 0..6 {
                assert!(v[s] <= v_star[s] + 1e-7);
            }
        }
    }

    #[test]
    fn average_reward_of_two_state_cycle() {
        let mdp = DiscreteMdp::from_tables(2, 1, &[0.0, 1.0, 1.0, 0.0], &[3.0, 1.0], 0.9).unwrap();
        let pi = StationaryPolicy::uniform(2, 1);
        assert_relative_eq!(average_reward(&mdp, &pi).unwrap(), 2.0, epsilon = 1e-12);
    }
}
