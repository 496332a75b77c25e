use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::mdp::DiscreteMdp;
use crate::{Error, Result};

/// Normal-Gamma belief `(μ, κ, α, β)` over the mean and precision of a
/// Gaussian reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGamma {
    pub mu: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalGamma {
    pub const DEFAULT_PRIOR: NormalGamma = NormalGamma {
        mu: 0.0,
        kappa: 1.0,
        alpha: 1.0,
        beta: 1.0,
    };

    pub fn new(mu: f64, kappa: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(kappa > 0.0 && alpha > 0.0 && beta > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Normal-Gamma needs κ, α, β > 0, got ({mu}, {kappa}, {alpha}, {beta})"
            )));
        }
        Ok(Self {
            mu,
            kappa,
            alpha,
            beta,
        })
    }

    /// Conjugate update with one observation.
    pub fn update(&mut self, r: f64) {
        let k = self.kappa;
        self.beta += k * (r - self.mu).powi(2) / (2.0 * (k + 1.0));
        self.mu = (k * self.mu + r) / (k + 1.0);
        self.kappa = k + 1.0;
        self.alpha += 0.5;
    }

    /// Posterior mean of the reward mean.
    pub fn mean(&self) -> f64 {
        self.mu
    }

    /// Draws the mean: `τ ~ Gamma(α, rate β)`, `μ ~ N(μ, 1/(κτ))`.
    pub fn sample_mean<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let tau = Gamma::new(self.alpha, 1.0 / self.beta)
            .expect("valid Gamma parameters")
            .sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        self.mu + z / (self.kappa * tau).sqrt()
    }

    /// Log joint density of `(mean, precision)`.
    pub fn ln_density(&self, mean: f64, precision: f64) -> f64 {
        use std::f64::consts::PI;
        if precision <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ln_gamma_pdf = self.alpha * self.beta.ln() - ln_gamma(self.alpha)
            + (self.alpha - 1.0) * precision.ln()
            - self.beta * precision;
        let var = 1.0 / (self.kappa * precision);
        let ln_normal = -0.5 * (2.0 * PI * var).ln() - (mean - self.mu).powi(2) / (2.0 * var);
        ln_gamma_pdf + ln_normal
    }
}

/// How sampled MDPs obtain their mean rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardSampling {
    /// Draw each mean from its Normal-Gamma posterior.
    #[default]
    Sampled,
    /// Use the posterior mean `μ`.
    PosteriorMean,
}

/// One observed discrete transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Dirichlet-product belief over transition kernels with independent
/// Normal-Gamma beliefs over each `(s, a)` reward.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletNormalGammaPosterior {
    n_states: usize,
    n_actions: usize,
    counts: Vec<f64>,
    rewards: Vec<NormalGamma>,
    discount: f64,
    reward_sampling: RewardSampling,
}

#[derive(Serialize, Deserialize)]
struct DiscreteSnapshot {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    reward_sampling: RewardSampling,
    /// `counts[s][a][s']`.
    counts: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][a] = [μ, κ, α, β]`.
    rewards: Vec<Vec<[f64; 4]>>,
}

impl DirichletNormalGammaPosterior {
    pub const DEFAULT_ALPHA: f64 = 0.5;

    pub fn prior(
        n_states: usize,
        n_actions: usize,
        alpha0: f64,
        reward_prior: NormalGamma,
        discount: f64,
    ) -> Result<Self> {
        if !(alpha0 > 0.0) {
            return Err(Error::InvalidInput(format!("Dirichlet prior {alpha0} must be positive")));
        }
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidInput("empty state or action space".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!("discount {discount} not in [0, 1)")));
        }
        NormalGamma::new(reward_prior.mu, reward_prior.kappa, reward_prior.alpha, reward_prior.beta)?;
        Ok(Self {
            n_states,
            n_actions,
            counts: vec![alpha0; n_states * n_actions * n_states],
            rewards: vec![reward_prior; n_states * n_actions],
            discount,
            reward_sampling: RewardSampling::default(),
        })
    }

    /// The default prior: counts 0.5 and `NG(0, 1, 1, 1)`.
    pub fn default_prior(n_states: usize, n_actions: usize, discount: f64) -> Result<Self> {
        Self::prior(
            n_states,
            n_actions,
            Self::DEFAULT_ALPHA,
            NormalGamma::DEFAULT_PRIOR,
            discount,
        )
    }

    pub fn with_reward_sampling(mut self, mode: RewardSampling) -> Self {
        self.reward_sampling = mode;
        self
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

    pub fn count(&self, s: usize, a: usize, next: usize) -> f64 {
        self.counts[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn counts_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.counts[start..start + self.n_states]
    }

    pub fn reward_belief(&self, s: usize, a: usize) -> &NormalGamma {
        &self.rewards[s * self.n_actions + a]
    }

    pub fn update(&mut self, obs: &Transition) -> Result<()> {
        if obs.state >= self.n_states || obs.next_state >= self.n_states {
            return Err(Error::IndexOutOfRange(format!(
                "state {} or {} not below {}",
                obs.state, obs.next_state, self.n_states
            )));
        }
        if obs.action >= self.n_actions {
            return Err(Error::InvalidAction {
                action: obs.action,
                n_actions: self.n_actions,
            });
        }
        if !obs.reward.is_finite() {
            return Err(Error::NonFinite("observed reward".into()));
        }
        let row = obs.state * self.n_actions + obs.action;
        self.counts[row * self.n_states + obs.next_state] += 1.0;
        self.rewards[row].update(obs.reward);
        Ok(())
    }

    /// Draws a complete MDP: Dirichlet transition rows and reward means.
    pub fn sample_mdp<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DiscreteMdp {
        let n = self.n_states;
        let rows = n * self.n_actions;
        let mut p = DMatrix::zeros(rows, n);
        let mut buf = vec![0.0; n];
        for row in 0..rows {
            sample_dirichlet(&self.counts[row * n..(row + 1) * n], rng, &mut buf);
            for (k, &x) in buf.iter().enumerate() {
                p[(row, k)] = x;
            }
        }
        let r = DMatrix::from_fn(n, self.n_actions, |s, a| {
            let ng = &self.rewards[s * self.n_actions + a];
            match self.reward_sampling {
                RewardSampling::Sampled => ng.sample_mean(rng),
                RewardSampling::PosteriorMean => ng.mean(),
            }
        });
        DiscreteMdp::new(p, r, self.discount).expect("sampled MDP is valid")
    }

    /// Normalised counts and posterior-mean rewards.
    pub fn mean_mdp(&self) -> DiscreteMdp {
        let n = self.n_states;
        let rows = n * self.n_actions;
        let mut p = DMatrix::zeros(rows, n);
        for row in 0..rows {
            let c = &self.counts[row * n..(row + 1) * n];
            let total: f64 = c.iter().sum();
            for (k, &x) in c.iter().enumerate() {
                p[(row, k)] = x / total;
            }
        }
        let r = DMatrix::from_fn(n, self.n_actions, |s, a| {
            self.rewards[s * self.n_actions + a].mean()
        });
        DiscreteMdp::new(p, r, self.discount).expect("mean MDP is valid")
    }

    pub fn to_json(&self) -> Result<String> {
        let n = self.n_states;
        let m = self.n_actions;
        let snap = DiscreteSnapshot {
            n_states: n,
            n_actions: m,
            discount: self.discount,
            reward_sampling: self.reward_sampling,
            counts: (0..n)
                .map(|s| (0..m).map(|a| self.counts_row(s, a).to_vec()).collect())
                .collect(),
            rewards: (0..n)
                .map(|s| {
                    (0..m)
                        .map(|a| {
                            let g = self.reward_belief(s, a);
                            [g.mu, g.kappa, g.alpha, g.beta]
                        })
                        .collect()
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&snap)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: DiscreteSnapshot = serde_json::from_str(text)?;
        let (n, m) = (snap.n_states, snap.n_actions);
        let shape_ok = snap.counts.len() == n
            && snap.counts.iter().all(|row| row.len() == m && row.iter().all(|c| c.len() == n))
            && snap.rewards.len() == n
            && snap.rewards.iter().all(|row| row.len() == m);
        if !shape_ok {
            return Err(Error::Dimension("posterior snapshot has inconsistent shape".into()));
        }
        let counts: Vec<f64> = snap.counts.into_iter().flatten().flatten().collect();
        if counts.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::InvalidInput("Dirichlet counts must be positive".into()));
        }
        let rewards = snap
            .rewards
            .into_iter()
            .flatten()
            .map(|[mu, kappa, alpha, beta]| NormalGamma::new(mu, kappa, alpha, beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_states: n,
            n_actions: m,
            counts,
            rewards,
            discount: snap.discount,
            reward_sampling: snap.reward_sampling,
        })
    }
}

/// Dirichlet draw via normalised Gamma variates.
///
/// Shapes below one are drawn in log space as `Gamma(α+1)·U^{1/α}` so that
/// tiny concentrations cannot underflow the whole row to zero.
pub fn sample_dirichlet<R: rand::Rng + ?Sized>(alpha: &[f64], rng: &mut R, out: &mut [f64]) {
    debug_assert_eq!(alpha.len(), out.len());
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = if a >= 1.0 {
            let g = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
            g.ln()
        } else {
            let g: f64 = Gamma::new(a + 1.0, 1.0).expect("positive shape").sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / a
        };
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
