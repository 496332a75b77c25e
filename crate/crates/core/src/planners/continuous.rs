use nalgebra::{DMatrix, DVector};

use super::PlannerConfig;
use crate::env::ContinuousEnvironment;
use crate::inference::{
    compute_weights, fitted_q_belief, UtilitySampleSet, ValueBeliefFittedQ, WeightMode,
    MAX_SIGMA_DOUBLINGS,
};
use crate::posterior::{BayesLinRegPosterior, LinearMdpSample};
use crate::{Error, Result};

/// A continuous BBI plan: fitted-Q beliefs `ψ_1, …, ψ_T`.
#[derive(Debug, Clone)]
pub struct ContinuousPlan {
    pub beliefs: Vec<ValueBeliefFittedQ>,
    pub probe_states: Vec<DVector<f64>>,
    /// Weights used at stages `1..T−1`.
    pub weights: Vec<DMatrix<f64>>,
}

impl ContinuousPlan {
    /// Action of `π_1` at a state with value features `phi`.
    pub fn act(&self, phi: &DVector<f64>) -> usize {
        self.beliefs[0].greedy(phi)
    }
}

/// Probe states: a share drawn from the visited states, the rest uniform
/// over the environment's probe box.
fn draw_probes<R: rand::Rng + ?Sized>(
    env: &dyn ContinuousEnvironment,
    history: &[DVector<f64>],
    config: &PlannerConfig,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let n = config.n_probe_states;
    let from_history = if history.is_empty() {
        0
    } else {
        (config.history_probe_fraction * n as f64).round() as usize
    };
    let (lo, hi) = env.probe_support();
    (0..n)
        .map(|m| {
            if m < from_history {
                history[rng.random_range(0..history.len())].clone()
            } else {
                DVector::from_fn(lo.len(), |i, _| {
                    if hi[i] > lo[i] {
                        rng.random_range(lo[i]..hi[i])
                    } else {
                        lo[i]
                    }
                })
            }
        })
        .collect()
}

/// One sampled successor per `(j, m, a)`, shared by every stage.
struct Successors {
    /// `features[j][m * A + a]`, `None` when the successor failed.
    features: Vec<Vec<Option<DVector<f64>>>>,
    /// `reward[j][(m, a)]`.
    reward: Vec<DMatrix<f64>>,
}

fn sample_successors<R: rand::Rng + ?Sized>(
    env: &dyn ContinuousEnvironment,
    mdps: &[LinearMdpSample],
    probe_regressors: &[DVector<f64>],
    rng: &mut R,
) -> Successors {
    let n_a = env.n_actions();
    let mut features = Vec::with_capacity(mdps.len());
    let mut reward = Vec::with_capacity(mdps.len());
    for mdp in mdps {
        let mut f = Vec::with_capacity(probe_regressors.len() * n_a);
        let mut r = DMatrix::zeros(probe_regressors.len(), n_a);
        for (m, x) in probe_regressors.iter().enumerate() {
            for a in 0..n_a {
                let next = mdp.sample_next_state(x, a, rng);
                r[(m, a)] = mdp.mean_reward(x, a);
                f.push(if env.is_failure(&next) || next.iter().any(|v| !v.is_finite()) {
                    None
                } else {
                    Some(env.features(&next))
                });
            }
        }
        features.push(f);
        reward.push(r);
    }
    Successors { features, reward }
}

/// Bayesian backwards induction with linear-Gaussian MDP samples and
/// fitted-Q beliefs.
///
/// `history` supplies visited states for the probe mixture; the
/// environment supplies features, the failure predicate and the probe box.
/// A failed successor contributes no continuation value.
pub fn bbi_plan_continuous<R: rand::Rng + ?Sized>(
    posterior: &BayesLinRegPosterior,
    env: &dyn ContinuousEnvironment,
    history: &[DVector<f64>],
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<ContinuousPlan> {
    config.validate()?;
    let n_a = env.n_actions();
    let n_f = env.n_features();
    if posterior.n_actions() != n_a {
        return Err(Error::Dimension("posterior and environment disagree on actions".into()));
    }
    let mdps = (0..config.n_mdp_samples)
        .map(|_| posterior.sample_mdp(rng))
        .collect::<Result<Vec<_>>>()?;
    let n_m = mdps.len();
    let n_v = config.n_value_samples;
    let gamma = posterior.discount();
    let mut scale = config.scale(env.reward_bounds())?;

    let probes = draw_probes(env, history, config, rng);
    let phis: Vec<DVector<f64>> = probes.iter().map(|s| env.features(s)).collect();
    let regressors: Vec<DVector<f64>> = probes.iter().map(|s| env.model_features(s)).collect();
    let succ = sample_successors(env, &mdps, &regressors, rng);
    let n_p = probes.len();
    let probe_idx: Vec<usize> = (0..n_p).collect();
    let phi_rows = DMatrix::from_fn(n_p, n_f, |m, i| phis[m][i]);

    let t = config.lookahead;
    let mut beliefs = vec![ValueBeliefFittedQ::zeros(n_a, n_f); t];
    let mut weights_log = Vec::with_capacity(t.saturating_sub(1));
    for i in (0..t.saturating_sub(1)).rev() {
        let mut attempts = 0;
        let (noise, weights) = loop {
            let next = &beliefs[i + 1];
            let noise: Vec<Vec<f64>> = (0..n_v).map(|_| next.draw_noise(rng)).collect();
            let v = DMatrix::from_fn(n_p, n_v, |m, k| next.sampled_value(&phis[m], &noise[k]));
            if config.weight_mode == WeightMode::MeanField || n_m == 1 {
                break (noise, DMatrix::from_element(n_m, n_v, 1.0 / n_m as f64));
            }
            let evidence = if i + 2 >= t {
                UtilitySampleSet::zeros(n_m, probe_idx.clone())
            } else {
                let after = &beliefs[i + 2];
                let draws: Vec<Vec<f64>> = (0..config.n_next_value_samples.max(1))
                    .map(|_| after.draw_noise(rng))
                    .collect();
                let utilities = (0..n_m)
                    .map(|j| {
                        DMatrix::from_fn(n_p, draws.len(), |m, l| {
                            let a = next.greedy(&phis[m]);
                            let cont = succ.features[j][m * n_a + a]
                                .as_ref()
                                .map_or(0.0, |phi| after.sampled_value(phi, &draws[l]));
                            succ.reward[j][(m, a)] + gamma * cont
                        })
                    })
                    .collect();
                UtilitySampleSet {
                    utilities,
                    probe_states: probe_idx.clone(),
                }
            };
            match compute_weights(&v, &evidence, scale) {
                Ok(w) => break (noise, w),
                Err(Error::UnstableWeights { .. }) if attempts < MAX_SIGMA_DOUBLINGS => {
                    attempts += 1;
                    scale = scale.doubled();
                }
                Err(Error::UnstableWeights { .. }) => return Err(Error::UnstableWeights { attempts }),
                Err(e) => return Err(e),
            }
        };

        let next = &beliefs[i + 1];
        let rows = n_m * n_v * n_p;
        let mut fitted = Vec::with_capacity(n_a);
        for a in 0..n_a {
            let mut x = DMatrix::zeros(rows, n_f);
            let mut q = DVector::zeros(rows);
            let mut w = DVector::zeros(rows);
            let mut row = 0;
            for j in 0..n_m {
                for k in 0..n_v {
                    let wk = weights[(j, k)] / n_v as f64;
                    for m in 0..n_p {
                        let cont = succ.features[j][m * n_a + a]
                            .as_ref()
                            .map_or(0.0, |phi| next.sampled_value(phi, &noise[k]));
                        x.set_row(row, &phi_rows.row(m));
                        q[row] = succ.reward[j][(m, a)] + gamma * cont;
                        w[row] = wk;
                        row += 1;
                    }
                }
            }
            fitted.push(fitted_q_belief(&x, &q, &w, config.ridge_lambda)?);
        }
        beliefs[i] = ValueBeliefFittedQ { actions: fitted };
        weights_log.push(weights);
    }
    weights_log.reverse();
    Ok(ContinuousPlan {
        beliefs,
        probe_states: probes,
        weights: weights_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{InvertedPendulum, PendulumConfig};
    use crate::posterior::LinRegPrior;

    #[test]
    fn plan_has_requested_length_and_finite_weights() {
        let env = InvertedPendulum::new(PendulumConfig::default(), 0);
        let post = BayesLinRegPosterior::prior(3, env.n_model_features(), 2, LinRegPrior::default(), 0.99).unwrap();
        let cfg = PlannerConfig { lookahead: 5, n_value_samples: 4, n_probe_states: 6, ..PlannerConfig::continuous() };
        let plan = bbi_plan_continuous(&post, &env, &[], &cfg, &mut crate::seeded_rng(0, 0)).unwrap();
        assert_eq!(plan.beliefs.len(), 5);
        for b in &plan.beliefs {
            for e in &b.actions {
                assert!(e.omega.iter().all(|x| x.is_finite()));
            }
        }
    }
}
