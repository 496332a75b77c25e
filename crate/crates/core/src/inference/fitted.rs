use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::solve_spd;
use crate::{Error, Result};

/// One action's weighted linear fit `Q(s, a) ≈ φ(s)ᵀω + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedQEntry {
    #[serde(with = "crate::linalg::flat_vector")]
    pub omega: DVector<f64>,
    /// Standard deviation of `ε`, the weighted residual spread.
    pub noise_sd: f64,
    /// Weighted mean `m^a` of the Q samples.
    pub mean: f64,
    /// Weighted variance `S^a` of the Q samples about `m^a`.
    pub variance: f64,
}

impl FittedQEntry {
    pub fn zero(n_features: usize) -> Self {
        Self {
            omega: DVector::zeros(n_features),
            noise_sd: 0.0,
            mean: 0.0,
            variance: 0.0,
        }
    }
}

/// Weighted ridge solution `ω = (ΦᵀWΦ + λI)⁻¹ ΦᵀWQ` together with the
/// residual and sample spreads.
///
/// `features` holds one sample per row.
pub fn fitted_q_belief(
    features: &DMatrix<f64>,
    q_values: &DVector<f64>,
    weights: &DVector<f64>,
    lambda: f64,
) -> Result<FittedQEntry> {
    let (n, f) = features.shape();
    if q_values.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows, {} targets, {} weights",
            q_values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0) || lambda < 0.0 {
        return Err(Error::InvalidInput("weights and ridge must be nonnegative".into()));
    }
    let total: f64 = weights.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("fitted-Q weights sum to zero".into()));
    }
    let mut wphi = features.clone();
    for (mut row, &w) in wphi.row_iter_mut().zip(weights.iter()) {
        row *= w;
    }
    let mut gram = features.tr_mul(&wphi);
    for i in 0..f {
        gram[(i, i)] += lambda;
    }
    let rhs = wphi.tr_mul(q_values);
    let omega = solve_spd(&gram, &rhs)?;

    let resid = q_values - features * &omega;
    let resid_var = weights.dot(&resid.component_mul(&resid)) / total;
    let mean = weights.dot(q_values) / total;
    let centred = q_values.add_scalar(-mean);
    let variance = weights.dot(&centred.component_mul(&centred)) / total;
    Ok(FittedQEntry {
        omega,
        noise_sd: resid_var.max(0.0).sqrt(),
        mean,
        variance,
    })
}

/// Per-action fitted-Q belief over the value of continuous states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBeliefFittedQ {
    pub actions: Vec<FittedQEntry>,
}

impl ValueBeliefFittedQ {
    /// The terminal belief: zero for every action, no noise.
    pub fn zeros(n_actions: usize, n_features: usize) -> Self {
        Self {
            actions: vec![FittedQEntry::zero(n_features); n_actions],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn q(&self, phi: &DVector<f64>, action: usize) -> f64 {
        self.actions[action].omega.dot(phi)
    }

    /// Greedy action of the fitted means; the lowest index wins ties.
    pub fn greedy(&self, phi: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..self.n_actions() {
            let q = self.q(phi, a);
            if q > best_q {
                best = a;
                best_q = q;
            }
        }
        best
    }

    pub fn value(&self, phi: &DVector<f64>) -> f64 {
        self.q(phi, self.greedy(phi))
    }

    /// One noise draw `ε_a ~ N(0, σ_a²)` per action, defining a value sample
    /// `V(s) = max_a φ(s)ᵀω_a + ε_a`.
    pub fn draw_noise<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.actions
            .iter()
            .map(|e| {
                let z: f64 = StandardNormal.sample(rng);
                e.noise_sd * z
            })
            .collect()
    }

    /// The value sample selected by `noise` at features `phi`.
    pub fn sampled_value(&self, phi: &DVector<f64>, noise: &[f64]) -> f64 {
        self.actions
            .iter()
            .zip(noise)
            .map(|(e, n)| e.omega.dot(phi) + n)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
