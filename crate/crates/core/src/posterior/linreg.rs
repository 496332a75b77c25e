use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{inverse_spd, jittered_cholesky, symmetrize};
use crate::{Error, Result};

/// One observed continuous transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTransition {
    #[serde(with = "crate::linalg::flat_vector")]
    pub state: DVector<f64>,
    pub action: usize,
    pub reward: f64,
    #[serde(with = "crate::linalg::flat_vector")]
    pub next_state: DVector<f64>,
    /// The step ended the episode.
    #[serde(default)]
    pub terminal: bool,
}

/// Prior scales of the per-action regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinRegPrior {
    /// Column precision `Λ0 = scale·I` of the transition coefficients.
    pub coef_precision: f64,
    /// Inverse-Wishart scale `Ψ0 = scale·I`.
    pub noise_scale: f64,
    /// Inverse-Wishart degrees of freedom; `None` means the state dimension.
    pub dof: Option<f64>,
    /// Precision `scale·I` of the reward coefficients.
    pub reward_precision: f64,
    pub reward_shape: f64,
    pub reward_rate: f64,
}

impl Default for LinRegPrior {
    fn default() -> Self {
        Self {
            coef_precision: 0.001,
            noise_scale: 0.001,
            dof: None,
            reward_precision: 0.001,
            reward_shape: 0.5,
            reward_rate: 0.5,
        }
    }
}

/// Matrix-normal–inverse-Wishart regression `y = Bᵀx + e`, `e ~ N(0, Σ)`,
/// kept as sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixNormalInverseWishart {
    #[serde(with = "crate::linalg::nested_matrix")]
    m0: DMatrix<f64>,
    #[serde(with = "crate::linalg::nested_matrix")]
    lambda0: DMatrix<f64>,
    #[serde(with = "crate::linalg::nested_matrix")]
    psi0: DMatrix<f64>,
    nu0: f64,
    #[serde(with = "crate::linalg::nested_matrix")]
    xtx: DMatrix<f64>,
    #[serde(with = "crate::linalg::nested_matrix")]
    xty: DMatrix<f64>,
    #[serde(with = "crate::linalg::nested_matrix")]
    yty: DMatrix<f64>,
    n: f64,
}

/// Posterior parameters `(M, Λ, Ψ, ν)`.
#[derive(Debug, Clone)]
pub struct MniwParams {
    pub mean: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl MatrixNormalInverseWishart {
    pub fn new(m0: DMatrix<f64>, lambda0: DMatrix<f64>, psi0: DMatrix<f64>, nu0: f64) -> Result<Self> {
        let (f, d) = m0.shape();
        if lambda0.shape() != (f, f) || psi0.shape() != (d, d) {
            return Err(Error::Dimension("prior matrices disagree with the coefficient shape".into()));
        }
        if nu0 < d as f64 {
            return Err(Error::InvalidInput(format!("degrees of freedom {nu0} below dimension {d}")));
        }
        Ok(Self {
            m0,
            lambda0,
            psi0,
            nu0,
            xtx: DMatrix::zeros(f, f),
            xty: DMatrix::zeros(f, d),
            yty: DMatrix::zeros(d, d),
            n: 0.0,
        })
    }

    pub fn n_observations(&self) -> f64 {
        self.n
    }

    pub fn update(&mut self, x: &DVector<f64>, y: &DVector<f64>) {
        self.xtx.ger(1.0, x, x, 1.0);
        self.xty.ger(1.0, x, y, 1.0);
        self.yty.ger(1.0, y, y, 1.0);
        self.n += 1.0;
    }

    pub fn params(&self) -> Result<MniwParams> {
        let precision = symmetrize(&(&self.lambda0 + &self.xtx));
        let inv = inverse_spd(&precision)?;
        let mean = &inv * (&self.lambda0 * &self.m0 + &self.xty);
        let scale = &self.psi0 + &self.yty + self.m0.transpose() * &self.lambda0 * &self.m0
            - mean.transpose() * &precision * &mean;
        Ok(MniwParams {
            mean,
            precision,
            scale: symmetrize(&scale),
            dof: self.nu0 + self.n,
        })
    }

    /// Draws `(B, Σ)`: `Σ ~ IW(Ψ, ν)` by Bartlett decomposition, then
    /// `B = M + chol(Λ⁻¹) Z chol(Σ)ᵀ`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let p = self.params()?;
        let (f, d) = p.mean.shape();
        let sigma = sample_inverse_wishart(&p.scale, p.dof, rng)?;
        let row_chol = jittered_cholesky(&inverse_spd(&p.precision)?)?;
        let col_chol = jittered_cholesky(&sigma)?;
        let z = DMatrix::from_fn(f, d, |_, _| StandardNormal.sample(rng));
        let b = &p.mean + row_chol * z * col_chol.transpose();
        Ok((b, sigma))
    }
}

/// `Σ ~ IW(Ψ, ν)`, drawn as the inverse of a Bartlett-decomposed
/// `Wishart(Ψ⁻¹, ν)`.
pub fn sample_inverse_wishart<R: rand::Rng + ?Sized>(
    scale: &DMatrix<f64>,
    dof: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if dof <= d as f64 - 1.0 {
        return Err(Error::InvalidInput(format!("inverse-Wishart needs ν > d − 1, got {dof}")));
    }
    let l_psi = jittered_cholesky(scale)?;
    let psi = &l_psi * l_psi.transpose();
    let l = jittered_cholesky(&inverse_spd(&psi)?)?;
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .sample(rng);
        a[(i, i)] = chi.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    inverse_spd(&wishart)
}

/// Normal–inverse-Gamma regression `r = βᵀx + e`, `e ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalInverseGamma {
    #[serde(with = "crate::linalg::flat_vector")]
    beta0: DVector<f64>,
    #[serde(with = "crate::linalg::nested_matrix")]
    lambda0: DMatrix<f64>,
    a0: f64,
    b0: f64,
    #[serde(with = "crate::linalg::nested_matrix")]
    xtx: DMatrix<f64>,
    #[serde(with = "crate::linalg::flat_vector")]
    xtr: DVector<f64>,
    rtr: f64,
    n: f64,
}

impl NormalInverseGamma {
    pub fn new(beta0: DVector<f64>, lambda0: DMatrix<f64>, a0: f64, b0: f64) -> Result<Self> {
        let f = beta0.len();
        if lambda0.shape() != (f, f) {
            return Err(Error::Dimension("reward prior precision shape".into()));
        }
        if !(a0 > 0.0 && b0 > 0.0) {
            return Err(Error::InvalidInput("inverse-Gamma shape and rate must be positive".into()));
        }
        Ok(Self {
            beta0,
            lambda0,
            a0,
            b0,
            xtx: DMatrix::zeros(f, f),
            xtr: DVector::zeros(f),
            rtr: 0.0,
            n: 0.0,
        })
    }

    pub fn update(&mut self, x: &DVector<f64>, r: f64) {
        self.xtx.ger(1.0, x, x, 1.0);
        self.xtr.axpy(r, x, 1.0);
        self.rtr += r * r;
        self.n += 1.0;
    }

    /// Posterior `(β, Λ, a, b)`.
    pub fn params(&self) -> Result<(DVector<f64>, DMatrix<f64>, f64, f64)> {
        let precision = symmetrize(&(&self.lambda0 + &self.xtx));
        let inv = inverse_spd(&precision)?;
        let beta = &inv * (&self.lambda0 * &self.beta0 + &self.xtr);
        let a = self.a0 + 0.5 * self.n;
        let quad = self.rtr + self.beta0.dot(&(&self.lambda0 * &self.beta0))
            - beta.dot(&(&precision * &beta));
        let b = (self.b0 + 0.5 * quad).max(self.b0 * 1e-12);
        Ok((beta, precision, a, b))
    }

    /// Draws `(β, σ²)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<(DVector<f64>, f64)> {
        let (beta, precision, a, b) = self.params()?;
        let tau: f64 = Gamma::new(a, 1.0 / b)
            .map_err(|e| Error::InvalidInput(e.to_string()))?
            .sample(rng);
        let var = 1.0 / tau;
        let chol = jittered_cholesky(&(inverse_spd(&precision)? * var))?;
        let z = DVector::from_fn(beta.len(), |_, _| StandardNormal.sample(rng));
        Ok((beta + chol * z, var))
    }
}

/// Per-action Bayesian linear models of the next state and the reward,
/// both regressed on the state features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLinRegPosterior {
    n_features: usize,
    state_dim: usize,
    discount: f64,
    transitions: Vec<MatrixNormalInverseWishart>,
    rewards: Vec<NormalInverseGamma>,
}

/// One draw from [`BayesLinRegPosterior`].
#[derive(Debug, Clone)]
pub struct LinearMdpSample {
    /// Per action, `f × d` coefficients mapping features to the next state.
    pub transition_coef: Vec<DMatrix<f64>>,
    /// Per action, lower Cholesky factor of the next-state noise.
    pub noise_chol: Vec<DMatrix<f64>>,
    pub reward_coef: Vec<DVector<f64>>,
    pub reward_var: Vec<f64>,
    pub discount: f64,
}

impl LinearMdpSample {
    pub fn n_actions(&self) -> usize {
        self.transition_coef.len()
    }

    pub fn mean_next_state(&self, phi: &DVector<f64>, action: usize) -> DVector<f64> {
        self.transition_coef[action].tr_mul(phi)
    }

    pub fn sample_next_state<R: rand::Rng + ?Sized>(
        &self,
        phi: &DVector<f64>,
        action: usize,
        rng: &mut R,
    ) -> DVector<f64> {
        let mean = self.mean_next_state(phi, action);
        let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
        mean + &self.noise_chol[action] * z
    }

    pub fn mean_reward(&self, phi: &DVector<f64>, action: usize) -> f64 {
        self.reward_coef[action].dot(phi)
    }
}

impl BayesLinRegPosterior {
    pub fn prior(
        n_actions: usize,
        n_features: usize,
        state_dim: usize,
        prior: LinRegPrior,
        discount: f64,
    ) -> Result<Self> {
        if n_actions == 0 || n_features == 0 || state_dim == 0 {
            return Err(Error::InvalidInput("empty action, feature or state space".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidInput(format!("discount {discount} not in [0, 1)")));
        }
        let id_f = DMatrix::<f64>::identity(n_features, n_features);
        let id_d = DMatrix::<f64>::identity(state_dim, state_dim);
        let nu0 = prior.dof.unwrap_or(state_dim as f64);
        let transitions = (0..n_actions)
            .map(|_| {
                MatrixNormalInverseWishart::new(
                    DMatrix::zeros(n_features, state_dim),
                    &id_f * prior.coef_precision,
                    &id_d * prior.noise_scale,
                    nu0,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let rewards = (0..n_actions)
            .map(|_| {
                NormalInverseGamma::new(
                    DVector::zeros(n_features),
                    &id_f * prior.reward_precision,
                    prior.reward_shape,
                    prior.reward_rate,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_features,
            state_dim,
            discount,
            transitions,
            rewards,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition_model(&self, action: usize) -> &MatrixNormalInverseWishart {
        &self.transitions[action]
    }

    pub fn reward_model(&self, action: usize) -> &NormalInverseGamma {
        &self.rewards[action]
    }

    /// Updates with `φ(s)`, the action, the reward and the next state.
    pub fn update(
        &mut self,
        phi: &DVector<f64>,
        action: usize,
        reward: f64,
        next_state: &DVector<f64>,
    ) -> Result<()> {
        if action >= self.n_actions() {
            return Err(Error::InvalidAction {
                action,
                n_actions: self.n_actions(),
            });
        }
        if phi.len() != self.n_features || next_state.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "expected {} features and {} state entries, got {} and {}",
                self.n_features,
                self.state_dim,
                phi.len(),
                next_state.len()
            )));
        }
        if !reward.is_finite() || phi.iter().chain(next_state.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("continuous observation".into()));
        }
        self.transitions[action].update(phi, next_state);
        self.rewards[action].update(phi, reward);
        Ok(())
    }

    pub fn sample_mdp<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<LinearMdpSample> {
        let mut out = LinearMdpSample {
            transition_coef: Vec::with_capacity(self.n_actions()),
            noise_chol: Vec::with_capacity(self.n_actions()),
            reward_coef: Vec::with_capacity(self.n_actions()),
            reward_var: Vec::with_capacity(self.n_actions()),
            discount: self.discount,
        };
        for (tr, rw) in self.transitions.iter().zip(&self.rewards) {
            let (b, sigma) = tr.sample(rng)?;
            out.transition_coef.push(b);
            out.noise_chol.push(jittered_cholesky(&sigma)?);
            let (beta, var) = rw.sample(rng)?;
            out.reward_coef.push(beta);
            out.reward_var.push(var);
        }
        Ok(out)
    }

    /// Posterior-mean model with zero noise.
    pub fn mean_mdp(&self) -> Result<LinearMdpSample> {
        let mut out = LinearMdpSample {
            transition_coef: Vec::new(),
            noise_chol: Vec::new(),
            reward_coef: Vec::new(),
            reward_var: Vec::new(),
            discount: self.discount,
        };
        for (tr, rw) in self.transitions.iter().zip(&self.rewards) {
            out.transition_coef.push(tr.params()?.mean);
            out.noise_chol.push(DMatrix::zeros(self.state_dim, self.state_dim));
            let (beta, _, _, _) = rw.params()?;
            out.reward_coef.push(beta);
            out.reward_var.push(0.0);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
