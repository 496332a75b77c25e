use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::EnvId;
use crate::inference::WeightMode;
use crate::planners::PlannerConfig;
use crate::posterior::RewardSampling;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmId {
    Bbi,
    Psrl,
    Mmbi,
    MeanFieldBbi,
    Random,
}

impl AlgorithmId {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmId::Bbi => "bbi",
            AlgorithmId::Psrl => "psrl",
            AlgorithmId::Mmbi => "mmbi",
            AlgorithmId::MeanFieldBbi => "mean-field-bbi",
            AlgorithmId::Random => "random",
        }
    }

    pub fn all() -> [AlgorithmId; 5] {
        [
            AlgorithmId::Bbi,
            AlgorithmId::Psrl,
            AlgorithmId::Mmbi,
            AlgorithmId::MeanFieldBbi,
            AlgorithmId::Random,
        ]
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmId::all()
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// When the agent recomputes its policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReplanSchedule {
    /// `t = 1, 3, 6, 10, …`
    #[default]
    Triangular,
    /// `t = 1, 1 + n, 1 + 2n, …`
    Every(usize),
}

impl ReplanSchedule {
    pub fn is_replan(self, t: usize) -> bool {
        match self {
            ReplanSchedule::Triangular => is_triangular(t),
            ReplanSchedule::Every(n) => t >= 1 && (t - 1) % n == 0,
        }
    }
}

/// Whether `t = k(k+1)/2` for some `k ≥ 1`.
pub fn is_triangular(t: usize) -> bool {
    if t == 0 {
        return false;
    }
    // 8t + 1 must be an odd perfect square.
    let x = 8 * t as u128 + 1;
    let r = (x as f64).sqrt() as u128;
    (r.saturating_sub(1)..=r + 1).any(|c| c * c == x)
}

impl FromStr for ReplanSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "triangular" {
            return Ok(ReplanSchedule::Triangular);
        }
        let n = s
            .strip_prefix("every:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::Config(format!("replan schedule '{s}' is not 'triangular' or 'every:N'"))
            })?;
        Ok(ReplanSchedule::Every(n))
    }
}

impl fmt::Display for ReplanSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplanSchedule::Triangular => f.write_str("triangular"),
            ReplanSchedule::Every(n) => write!(f, "every:{n}"),
        }
    }
}

impl Serialize for ReplanSchedule {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ReplanSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One experiment: an environment, an algorithm and its hyperparameters.
///
/// Planner keys left out of the file take the environment's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvId,
    pub algorithm: AlgorithmId,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub replan_schedule: ReplanSchedule,
    #[serde(default = "default_half_life")]
    pub half_life: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub reward_sampling: RewardSampling,
    #[serde(default = "default_dirichlet_prior")]
    pub dirichlet_prior: f64,
    pub n_mdp_samples: Option<usize>,
    pub lookahead: Option<usize>,
    pub gamma: Option<f64>,
    pub sigma_sq_factor: Option<f64>,
    pub n_value_samples: Option<usize>,
    pub n_next_value_samples: Option<usize>,
    pub ridge_lambda: Option<f64>,
    pub n_probe_states: Option<usize>,
    /// Dump plan diagnostics as JSON next to the CSV output.
    #[serde(default)]
    pub verbose: bool,
}

fn default_steps() -> usize {
    10_000
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_half_life() -> f64 {
    1000.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_dirichlet_prior() -> f64 {
    0.5
}

impl ExperimentConfig {
    pub fn new(environment: EnvId, algorithm: AlgorithmId) -> Self {
        Self {
            environment,
            algorithm,
            steps: default_steps(),
            seeds: default_seeds(),
            replan_schedule: ReplanSchedule::Triangular,
            half_life: default_half_life(),
            output_dir: default_output_dir(),
            reward_sampling: RewardSampling::Sampled,
            dirichlet_prior: default_dirichlet_prior(),
            n_mdp_samples: None,
            lookahead: None,
            gamma: None,
            sigma_sq_factor: None,
            n_value_samples: None,
            n_next_value_samples: None,
            ridge_lambda: None,
            n_probe_states: None,
            verbose: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The configuration with every planner key filled in.
    pub fn to_toml(&self) -> Result<String> {
        let p = self.planner();
        let full = Self {
            n_mdp_samples: Some(p.n_mdp_samples),
            lookahead: Some(p.lookahead),
            gamma: Some(p.gamma),
            sigma_sq_factor: Some(p.sigma_sq_factor),
            n_value_samples: Some(p.n_value_samples),
            n_next_value_samples: Some(p.n_next_value_samples),
            ridge_lambda: Some(p.ridge_lambda),
            n_probe_states: Some(p.n_probe_states),
            ..self.clone()
        };
        toml::to_string(&full).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn planner(&self) -> PlannerConfig {
        let d = PlannerConfig::for_env(self.environment);
        PlannerConfig {
            lookahead: self.lookahead.unwrap_or(d.lookahead),
            n_mdp_samples: self.n_mdp_samples.unwrap_or(d.n_mdp_samples),
            n_value_samples: self.n_value_samples.unwrap_or(d.n_value_samples),
            n_next_value_samples: self.n_next_value_samples.unwrap_or(d.n_next_value_samples),
            sigma_sq_factor: self.sigma_sq_factor.unwrap_or(d.sigma_sq_factor),
            gamma: self.gamma.unwrap_or(d.gamma),
            ridge_lambda: self.ridge_lambda.unwrap_or(d.ridge_lambda),
            n_probe_states: self.n_probe_states.unwrap_or(d.n_probe_states),
            weight_mode: match self.algorithm {
                AlgorithmId::MeanFieldBbi => WeightMode::MeanField,
                _ => WeightMode::Inferential,
            },
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !(self.half_life > 0.0) {
            return Err(Error::Config("half_life must be positive".into()));
        }
        if !(self.dirichlet_prior > 0.0) {
            return Err(Error::Config("dirichlet_prior must be positive".into()));
        }
        if !self.environment.is_discrete()
            && matches!(self.algorithm, AlgorithmId::Psrl | AlgorithmId::Mmbi)
        {
            return Err(Error::Config(format!(
                "{} needs a discrete environment, got {}",
                self.algorithm,
                self.environment.as_str()
            )));
        }
        self.planner().validate()
    }
}

/// Reads any serde-described settings (such as a study configuration) from
/// a TOML file.
pub fn load_toml<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
}

/// [`load_toml`], or the defaults without a path.
pub fn load_toml_or_default<T>(path: Option<&std::path::Path>) -> Result<T>
where
    T: serde::de::DeserializeOwned + Default,
{
    path.map_or_else(|| Ok(T::default()), load_toml)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangular_numbers() {
        let got: Vec<usize> = (1..=30).filter(|&t| is_triangular(t)).collect();
        assert_eq!(got, vec![1, 3, 6, 10, 15, 21, 28]);
        assert!(is_triangular(500_500));
        assert!(!is_triangular(500_501));
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("environment = \"maze\"\nalgorithm = \"bbi\"\n").unwrap();
        let p = cfg.planner();
        assert_eq!(p.n_value_samples, 20);
        assert_eq!(p.lookahead, 100);
        assert_eq!(p.n_mdp_samples, 10);
        assert_eq!(p.gamma, 0.99);
        assert_eq!(p.sigma_sq_factor, 1e-4);
        assert_eq!(p.n_next_value_samples, 10);
        assert_eq!(cfg.half_life, 1000.0);
        assert_eq!(cfg.replan_schedule, ReplanSchedule::Triangular);
    }

    #[test]
    fn full_config_round_trips() {
        let mut cfg = ExperimentConfig::new(EnvId::InvertedPendulum, AlgorithmId::Bbi);
        cfg.replan_schedule = ReplanSchedule::Every(25);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.planner(), cfg.planner());
        assert_eq!(back.replan_schedule, ReplanSchedule::Every(25));
        assert!(text.contains("lookahead = 20"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_pairs() {
        assert!(ExperimentConfig::from_toml("environment = \"nchain\"\nalgorithm = \"bbi\"\nfoo = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("environment = \"linear-model\"\nalgorithm = \"psrl\"\n").is_err());
        assert!(ExperimentConfig::from_toml("environment = \"nchain\"\nalgorithm = \"bbi\"\nseeds = []\n").is_err());
    }
}
