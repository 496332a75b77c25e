//! Monte-Carlo inferential induction of value-function beliefs.
//!
//! A belief `ψ_{i+1}` over the next-step value is pushed back one step by
//! sampling MDPs from the posterior, weighting each MDP by how well its
//! one-step utilities explain value draws from `ψ_{i+1}`, backing those
//! draws up through every MDP and refitting a Gaussian to the weighted
//! ensemble.

mod fitted;

pub use fitted::{fitted_q_belief, FittedQEntry, ValueBeliefFittedQ};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{jittered_cholesky, symmetrize};
use crate::mdp::{exact_policy_value, DiscreteMdp, StationaryPolicy, ValueVector};
use crate::posterior::DirichletNormalGammaPosterior;
use crate::{Error, Result};

/// Doublings of σ tried before giving up on a stage.
pub const MAX_SIGMA_DOUBLINGS: usize = 64;

/// Smallest exponent whose exponential is still a normal double.
const UNDERFLOW_EXPONENT: f64 = -708.0;

/// Variance of the Gaussian likelihood linking utilities to values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodScale {
    pub sigma_sq: f64,
    pub v_span: f64,
}

impl LikelihoodScale {
    pub const DEFAULT_FACTOR: f64 = 1e-4;

    /// `σ² = factor · V_span²`.
    pub fn from_span(v_span: f64, factor: f64) -> Result<Self> {
        let sigma_sq = factor * v_span * v_span;
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidInput(format!(
                "likelihood variance {sigma_sq} from span {v_span} and factor {factor}"
            )));
        }
        Ok(Self { sigma_sq, v_span })
    }

    /// Same span with σ doubled.
    pub fn doubled(self) -> Self {
        Self {
            sigma_sq: self.sigma_sq * 4.0,
            ..self
        }
    }
}

/// How MDP samples are weighted against value draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// Importance weights from the utility likelihood.
    #[default]
    Inferential,
    /// Uniform `1/N_M`, ignoring the value draws.
    MeanField,
}

/// Multivariate normal belief `N(m, S)` over a state-value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBeliefGaussian {
    #[serde(with = "crate::linalg::flat_vector")]
    pub mean: DVector<f64>,
    #[serde(with = "crate::linalg::nested_matrix")]
    pub covariance: DMatrix<f64>,
}

impl ValueBeliefGaussian {
    pub fn point_mass(v: DVector<f64>) -> Self {
        let n = v.len();
        Self {
            mean: v,
            covariance: DMatrix::zeros(n, n),
        }
    }

    pub fn zeros(n_states: usize) -> Self {
        Self::point_mass(DVector::zeros(n_states))
    }

    pub fn n_states(&self) -> usize {
        self.mean.len()
    }

    pub fn std_dev(&self, s: usize) -> f64 {
        self.covariance[(s, s)].max(0.0).sqrt()
    }

    /// `count` draws as the columns of an `S × count` matrix.
    pub fn sample<R: rand::Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let n = self.n_states();
        let l = jittered_cholesky(&self.covariance)?;
        let z = DMatrix::from_fn(n, count, |_, _| StandardNormal.sample(rng));
        let mut out = l * z;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        Ok(out)
    }

    /// Draws of the marginal value of one state.
    pub fn sample_marginal<R: rand::Rng + ?Sized>(&self, s: usize, count: usize, rng: &mut R) -> Vec<f64> {
        let sd = self.std_dev(s);
        (0..count)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                self.mean[s] + sd * z
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        if b.covariance.shape() != (b.mean.len(), b.mean.len()) {
            return Err(Error::Dimension("belief covariance does not match its mean".into()));
        }
        Ok(b)
    }
}

/// Backed-up value samples `V_i^{(j,k)}` with their weights `w_jk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedValueEnsemble {
    /// Per MDP `j`, an `S × N_V` matrix whose column `k` is `V_i^{(j,k)}`.
    #[serde(with = "crate::linalg::nested_matrix_vec")]
    pub values: Vec<DMatrix<f64>>,
    /// `N_M × N_V`; every column sums to one.
    #[serde(with = "crate::linalg::nested_matrix")]
    pub weights: DMatrix<f64>,
}

impl WeightedValueEnsemble {
    pub fn new(values: Vec<DMatrix<f64>>, weights: DMatrix<f64>) -> Result<Self> {
        let (n_m, n_v) = weights.shape();
        if values.len() != n_m || values.iter().any(|v| v.ncols() != n_v) {
            return Err(Error::Dimension(format!(
                "{} value blocks for a {n_m}x{n_v} weight matrix",
                values.len()
            )));
        }
        if values.windows(2).any(|w| w[0].nrows() != w[1].nrows()) {
            return Err(Error::Dimension("value blocks differ in state count".into()));
        }
        Ok(Self { values, weights })
    }

    pub fn n_mdps(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_value_samples(&self) -> usize {
        self.weights.ncols()
    }

    /// `ŵ_jk = w_jk / N_V`, summing to one over all pairs.
    pub fn normalized_weight(&self, j: usize, k: usize) -> f64 {
        self.weights[(j, k)] / self.n_value_samples() as f64
    }
}

/// Utilities `u^j` observed at the probe states.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySampleSet {
    /// Per MDP `j`, a `probes × draws` matrix.
    pub utilities: Vec<DMatrix<f64>>,
    pub probe_states: Vec<usize>,
}

impl UtilitySampleSet {
    /// The same utility `0` everywhere, the evidence about a terminal value.
    pub fn zeros(n_mdps: usize, probe_states: Vec<usize>) -> Self {
        Self {
            utilities: vec![DMatrix::zeros(probe_states.len(), 1); n_mdps],
            probe_states,
        }
    }
}

/// `r̄^π 1ᵀ + γ P^π V` applied to every column of `v`.
pub fn policy_backup(mdp: &DiscreteMdp, policy: &StationaryPolicy, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pv = backup_all_actions(mdp, v)?;
    mix_actions(mdp, policy, &pv)
}

/// `r(s,a) + γ Σ_{s'} P(s'|s,a) V(s')` for every column; rows indexed `s·A + a`.
fn backup_all_actions(mdp: &DiscreteMdp, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "value samples have {} rows, MDP has {} states",
            v.nrows(),
            mdp.n_states()
        )));
    }
    let mut q = mdp.transition_matrix() * v;
    q *= mdp.discount();
    let r = mdp.reward_table();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let row = mdp.row_index(s, a);
            q.row_mut(row).add_scalar_mut(r[(s, a)]);
        }
    }
    Ok(q)
}

fn mix_actions(mdp: &DiscreteMdp, policy: &StationaryPolicy, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension("policy does not match MDP".into()));
    }
    let mut out = DMatrix::zeros(mdp.n_states(), q.ncols());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let p = policy.prob(s, a);
            if p != 0.0 {
                let row = mdp.row_index(s, a);
                for k in 0..q.ncols() {
                    out[(s, k)] += p * q[(row, k)];
                }
            }
        }
    }
    Ok(out)
}

/// Bootstrap utilities `u = r̄_j(s,π) + γ P_j^π V'` for each draw `V'` of
/// the belief after the next step.
pub fn generate_utility_samples<R: rand::Rng + ?Sized>(
    mdps: &[DiscreteMdp],
    policy: &StationaryPolicy,
    next_belief: &ValueBeliefGaussian,
    probe_states: &[usize],
    n_draws: usize,
    rng: &mut R,
) -> Result<UtilitySampleSet> {
    let draws = next_belief.sample(n_draws.max(1), rng)?;
    utilities_from_draws(mdps, policy, &draws, probe_states)
}

/// [`generate_utility_samples`] with fixed next-value draws.
pub fn utilities_from_draws(
    mdps: &[DiscreteMdp],
    policy: &StationaryPolicy,
    draws: &DMatrix<f64>,
    probe_states: &[usize],
) -> Result<UtilitySampleSet> {
    let mut utilities = Vec::with_capacity(mdps.len());
    for mdp in mdps {
        if let Some(&bad) = probe_states.iter().find(|&&s| s >= mdp.n_states()) {
            return Err(Error::IndexOutOfRange(format!("probe state {bad}")));
        }
        let u = policy_backup(mdp, policy, draws)?;
        utilities.push(u.select_rows(probe_states));
    }
    Ok(UtilitySampleSet {
        utilities,
        probe_states: probe_states.to_vec(),
    })
}

/// Importance weights `w_jk ∝ Σ_m exp(−|V^(k)(s_m) − u^j_m|² / 2σ²)`,
/// normalised over `j` for every `k`.
///
/// `values_next` holds `V^(k)` as columns. Sums are taken after subtracting
/// the largest exponent per `k`; when even that exponent would underflow on
/// its own the likelihood carries no usable information and
/// [`Error::UnstableWeights`] asks the caller to widen σ.
pub fn compute_weights(
    values_next: &DMatrix<f64>,
    utilities: &UtilitySampleSet,
    scale: LikelihoodScale,
) -> Result<DMatrix<f64>> {
    let n_m = utilities.utilities.len();
    let n_v = values_next.ncols();
    if n_m == 0 || n_v == 0 || utilities.probe_states.is_empty() {
        return Err(Error::InvalidInput("weights need at least one MDP, value and probe".into()));
    }
    if values_next.iter().any(|x| !x.is_finite())
        || utilities.utilities.iter().any(|u| u.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite("value or utility sample".into()));
    }
    let shape = (utilities.probe_states.len(), utilities.utilities[0].ncols());
    if utilities.utilities.iter().any(|u| u.shape() != shape) {
        return Err(Error::Dimension("utility blocks must be probes × draws for every MDP".into()));
    }
    if let Some(&bad) = utilities.probe_states.iter().find(|&&s| s >= values_next.nrows()) {
        return Err(Error::IndexOutOfRange(format!("probe state {bad}")));
    }
    let inv = 1.0 / (2.0 * scale.sigma_sq);
    let mut w = DMatrix::zeros(n_m, n_v);
    let per_j = utilities.utilities[0].len();
    let mut exps = vec![0.0; n_m * per_j];
    let n_p = shape.0;
    let mut vk = vec![0.0; n_p];
    for k in 0..n_v {
        for (v, &s) in vk.iter_mut().zip(&utilities.probe_states) {
            *v = values_next[(s, k)];
        }
        let mut max_exp = f64::NEG_INFINITY;
        for (u, block) in utilities.utilities.iter().zip(exps.chunks_exact_mut(per_j)) {
            // Column-major: each column of u holds one draw over the probes.
            for (col, out) in u.as_slice().chunks_exact(n_p).zip(block.chunks_exact_mut(n_p)) {
                for ((&x, &v), e) in col.iter().zip(&vk).zip(out.iter_mut()) {
                    *e = -(v - x) * (v - x) * inv;
                    max_exp = max_exp.max(*e);
                }
            }
        }
        if n_m > 1 && max_exp < UNDERFLOW_EXPONENT {
            return Err(Error::UnstableWeights { attempts: 1 });
        }
        let mut total = 0.0;
        for j in 0..n_m {
            let s: f64 = exps[j * per_j..(j + 1) * per_j].iter().map(|&x| (x - max_exp).exp()).sum();
            w[(j, k)] = s;
            total += s;
        }
        for j in 0..n_m {
            w[(j, k)] /= total;
        }
    }
    Ok(w)
}

/// `V_i^{(j,k)} = B^π_{μ^(j)} V^(k)_{i+1}` for every pair.
pub fn propagate_values(
    mdps: &[DiscreteMdp],
    policy: &StationaryPolicy,
    values_next: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    mdps.iter().map(|m| policy_backup(m, policy, values_next)).collect()
}

/// Weighted mean and covariance of the ensemble under `ŵ_jk = w_jk / N_V`.
pub fn fit_gaussian_belief(ensemble: &WeightedValueEnsemble) -> Result<ValueBeliefGaussian> {
    let n = ensemble.values.first().map_or(0, |v| v.nrows());
    let total: f64 = ensemble.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("ensemble has zero total weight".into()));
    }
    let scale = 1.0 / total;
    let mut mean = DVector::zeros(n);
    for (j, block) in ensemble.values.iter().enumerate() {
        for k in 0..block.ncols() {
            mean.axpy(ensemble.weights[(j, k)] * scale, &block.column(k), 1.0);
        }
    }
    let mut cov = DMatrix::zeros(n, n);
    for (j, block) in ensemble.values.iter().enumerate() {
        for k in 0..block.ncols() {
            let w = ensemble.weights[(j, k)] * scale;
            if w == 0.0 {
                continue;
            }
            let d = block.column(k) - &mean;
            cov.ger(w, &d, &d, 1.0);
        }
    }
    Ok(ValueBeliefGaussian {
        mean,
        covariance: symmetrize(&cov),
    })
}

/// `N_V` draws from a belief; see [`ValueBeliefGaussian::sample`].
pub fn sample_belief<R: rand::Rng + ?Sized>(
    belief: &ValueBeliefGaussian,
    n_v: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    belief.sample(n_v, rng)
}

/// `Q̄(s,a) = Σ_{j,k} ŵ_jk [r_j(s,a) + γ Σ_{s'} P_j(s'|s,a) V^(k)(s')]`.
pub fn bayes_q(mdps: &[DiscreteMdp], weights: &DMatrix<f64>, values_next: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let blocks = mdps
        .iter()
        .map(|m| backup_all_actions(m, values_next))
        .collect::<Result<Vec<_>>>()?;
    weighted_q(mdps, weights, &blocks)
}

fn weighted_q(mdps: &[DiscreteMdp], weights: &DMatrix<f64>, blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = mdps
        .first()
        .ok_or_else(|| Error::InvalidInput("no MDP samples".into()))?;
    let (n_s, n_a) = (first.n_states(), first.n_actions());
    if weights.nrows() != mdps.len() {
        return Err(Error::Dimension("weight rows must match the MDP samples".into()));
    }
    let n_v = weights.ncols() as f64;
    let mut q = DMatrix::zeros(n_s, n_a);
    for (j, block) in blocks.iter().enumerate() {
        if block.ncols() != weights.ncols() {
            return Err(Error::Dimension("weight columns must match the value samples".into()));
        }
        let w: DVector<f64> = weights.row(j).transpose() / n_v;
        let contrib = block * w;
        for s in 0..n_s {
            for a in 0..n_a {
                q[(s, a)] += contrib[s * n_a + a];
            }
        }
    }
    Ok(q)
}

/// Settings of one Method-1 pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodOneConfig {
    pub lookahead: usize,
    pub n_mdp_samples: usize,
    pub n_value_samples: usize,
    pub n_next_value_samples: usize,
    pub weight_mode: WeightMode,
}

impl Default for MethodOneConfig {
    fn default() -> Self {
        Self {
            lookahead: 100,
            n_mdp_samples: 10,
            n_value_samples: 50,
            n_next_value_samples: 10,
            weight_mode: WeightMode::Inferential,
        }
    }
}

impl MethodOneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead == 0 || self.n_mdp_samples == 0 || self.n_value_samples == 0 {
            return Err(Error::Config(
                "lookahead, MDP samples and value samples must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which policy each stage follows.
#[derive(Debug, Clone, Copy)]
pub enum StagePolicy<'a> {
    Fixed(&'a StationaryPolicy),
    /// Greedy in the Bayes Q̄ of the stage.
    Greedy,
}

/// Everything one backwards pass produced, indexed by stage `1..=T`.
#[derive(Debug, Clone)]
pub struct InductionTrace {
    pub beliefs: Vec<ValueBeliefGaussian>,
    pub policies: Vec<StationaryPolicy>,
    /// Q̄ tables; empty under a fixed policy.
    pub bayes_q: Vec<DMatrix<f64>>,
    /// Weights used at each stage `1..T−1`, stage `T` has none.
    pub weights: Vec<DMatrix<f64>>,
    /// Final σ² after any fallback doublings.
    pub scale: LikelihoodScale,
}

/// Backwards Method-1 pass over fixed MDP samples.
///
/// `ψ_T` is a point mass at zero. For `i = T−1, …, 1`: draw `V^(k) ~ ψ_{i+1}`,
/// weight the MDPs by their utilities as evidence about `V_{i+1}` (the
/// evidence about the terminal value is zero), choose `π_i`, back the draws
/// up through every MDP under `π_i` and fit `ψ_i`. When the weights
/// underflow the value draws are redrawn and σ doubled for the rest of the
/// pass.
pub fn method_one_induction<R: rand::Rng + ?Sized>(
    mdps: &[DiscreteMdp],
    stage_policy: StagePolicy<'_>,
    config: &MethodOneConfig,
    scale: LikelihoodScale,
    rng: &mut R,
) -> Result<InductionTrace> {
    config.validate()?;
    let first = mdps
        .first()
        .ok_or_else(|| Error::InvalidInput("no MDP samples".into()))?;
    let n_s = first.n_states();
    let n_m = mdps.len();
    let t = config.lookahead;
    let probes: Vec<usize> = (0..n_s).collect();
    let uniform = DMatrix::from_element(n_m, config.n_value_samples, 1.0 / n_m as f64);

    let mut beliefs = vec![ValueBeliefGaussian::zeros(n_s); t];
    let mut policies: Vec<Option<StationaryPolicy>> = vec![None; t];
    let mut qs: Vec<Option<DMatrix<f64>>> = vec![None; t];
    let mut weights_log = Vec::with_capacity(t.saturating_sub(1));
    let mut scale = scale;

    // π_T acts on a zero continuation.
    let zero = DMatrix::zeros(n_s, 1);
    let terminal_weights = DMatrix::from_element(n_m, 1, 1.0 / n_m as f64);
    match stage_policy {
        StagePolicy::Fixed(p) => policies[t - 1] = Some(p.clone()),
        StagePolicy::Greedy => {
            let q = bayes_q(mdps, &terminal_weights, &zero)?;
            policies[t - 1] = Some(StationaryPolicy::greedy(&q));
            qs[t - 1] = Some(q);
        }
    }

    for i in (0..t.saturating_sub(1)).rev() {
        // 0-based stage i; ψ_{i+1} is beliefs[i + 1].
        let mut attempts = 0;
        let (values_next, weights) = loop {
            let v = beliefs[i + 1].sample(config.n_value_samples, rng)?;
            if config.weight_mode == WeightMode::MeanField || n_m == 1 {
                break (v, uniform.clone());
            }
            let evidence = if i + 2 >= t {
                UtilitySampleSet::zeros(n_m, probes.clone())
            } else {
                let next_policy = policies[i + 1].as_ref().expect("later stages are set");
                generate_utility_samples(
                    mdps,
                    next_policy,
                    &beliefs[i + 2],
                    &probes,
                    config.n_next_value_samples,
                    rng,
                )?
            };
            match compute_weights(&v, &evidence, scale) {
                Ok(w) => break (v, w),
                Err(Error::UnstableWeights { .. }) if attempts < MAX_SIGMA_DOUBLINGS => {
                    attempts += 1;
                    scale = scale.doubled();
                }
                Err(Error::UnstableWeights { .. }) => {
                    return Err(Error::UnstableWeights { attempts })
                }
                Err(e) => return Err(e),
            }
        };

        let blocks = mdps
            .iter()
            .map(|m| backup_all_actions(m, &values_next))
            .collect::<Result<Vec<_>>>()?;
        let policy = match stage_policy {
            StagePolicy::Fixed(p) => p.clone(),
            StagePolicy::Greedy => {
                let q = weighted_q(mdps, &weights, &blocks)?;
                let p = StationaryPolicy::greedy(&q);
                qs[i] = Some(q);
                p
            }
        };
        let values = mdps
            .iter()
            .zip(&blocks)
            .map(|(m, b)| mix_actions(m, &policy, b))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = WeightedValueEnsemble::new(values, weights.clone())?;
        beliefs[i] = fit_gaussian_belief(&ensemble)?;
        policies[i] = Some(policy);
        weights_log.push(weights);
    }
    weights_log.reverse();

    Ok(InductionTrace {
        beliefs,
        policies: policies.into_iter().map(|p| p.expect("every stage set")).collect(),
        bayes_q: qs.into_iter().flatten().collect(),
        weights: weights_log,
        scale,
    })
}

fn sample_mdps<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    n: usize,
    rng: &mut R,
) -> Vec<DiscreteMdp> {
    (0..n).map(|_| posterior.sample_mdp(rng)).collect()
}

/// Method-1 evaluation of a fixed policy; returns `ψ_1, …, ψ_T`.
pub fn policy_evaluation_method1<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    policy: &StationaryPolicy,
    config: &MethodOneConfig,
    scale: LikelihoodScale,
    rng: &mut R,
) -> Result<Vec<ValueBeliefGaussian>> {
    config.validate()?;
    let mdps = sample_mdps(posterior, config.n_mdp_samples, rng);
    Ok(method_one_induction(&mdps, StagePolicy::Fixed(policy), config, scale, rng)?.beliefs)
}

/// The same pipeline with uniform weights `1/N_M`.
pub fn mean_field_evaluation<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    policy: &StationaryPolicy,
    config: &MethodOneConfig,
    scale: LikelihoodScale,
    rng: &mut R,
) -> Result<Vec<ValueBeliefGaussian>> {
    let config = MethodOneConfig {
        weight_mode: WeightMode::MeanField,
        ..*config
    };
    policy_evaluation_method1(posterior, policy, &config, scale, rng)
}

/// Exact policy values of `n_mdps` posterior samples.
pub fn mc_value_distribution<R: rand::Rng + ?Sized>(
    posterior: &DirichletNormalGammaPosterior,
    policy: &StationaryPolicy,
    n_mdps: usize,
    rng: &mut R,
) -> Result<Vec<ValueVector>> {
    (0..n_mdps)
        .map(|_| exact_policy_value(&posterior.sample_mdp(rng), policy))
        .collect()
}
