use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmId, ExperimentConfig};
use super::metrics::{exp_smooth, mean_and_se};
use crate::env::{make_continuous, make_discrete, ContinuousEnvironment, DiscreteEnvironment};
use crate::mdp::StationaryPolicy;
use crate::planners::{bbi_plan, bbi_plan_continuous, mmbi_plan, psrl_plan, ContinuousPlan, PlannerConfig};
use crate::posterior::{
    BayesLinRegPosterior, DirichletNormalGammaPosterior, LinRegPrior, NormalGamma, Transition,
};
use crate::{seeded_rng, Error, Result, Rng};

/// Generator stream of the agent; the environment owns stream 0.
pub const AGENT_STREAM: u64 = 1;

/// Steps up to which every step is logged; later only every
/// [`LOG_STRIDE`]-th step and the last one.
pub const DENSE_LOG_STEPS: usize = 1000;
pub const LOG_STRIDE: usize = 100;

pub fn is_checkpoint(t: usize, steps: usize) -> bool {
    t <= DENSE_LOG_STEPS || t % LOG_STRIDE == 0 || t == steps
}

/// The logged steps of a run of `steps` steps.
pub fn checkpoints(steps: usize) -> Vec<usize> {
    (1..=steps).filter(|&t| is_checkpoint(t, steps)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRecord {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// State the action was taken in.
    pub state: StateRecord,
    pub action: usize,
    pub reward: f64,
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<StepRecord>,
    /// Steps at which the agent replanned.
    pub replans: Vec<usize>,
    /// Steps that ended an episode.
    pub episode_ends: Vec<usize>,
    /// Plan diagnostics as JSON, one per replan; only kept when verbose.
    #[serde(skip)]
    pub diagnostics: Vec<String>,
}

impl RunLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    /// Lengths of the completed episodes.
    pub fn episode_lengths(&self) -> Vec<usize> {
        let mut prev = 0;
        self.episode_ends
            .iter()
            .map(|&e| {
                let len = e - prev;
                prev = e;
                len
            })
            .collect()
    }

    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        let expected = self.records.last().map_or(1, |r| r.t + 1);
        if record.t != expected {
            return Err(Error::InvalidInput(format!(
                "step {} logged after step {}",
                record.t,
                expected - 1
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// CSV rows at the logging checkpoints.
    pub fn csv_rows(&self, half_life: f64) -> Result<Vec<CsvRow>> {
        let rewards = self.rewards();
        let smoothed = exp_smooth(&rewards, half_life)?;
        let steps = rewards.len();
        Ok(checkpoints(steps)
            .into_iter()
            .map(|t| CsvRow {
                seed: self.seed,
                step: t,
                reward: round_sig9(rewards[t - 1]),
                smoothed_reward: round_sig9(smoothed[t - 1]),
                replanned: self.replans.binary_search(&t).is_ok(),
            })
            .collect())
    }
}

/// `(t, smoothed reward)` at the logging checkpoints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SmoothedCurve {
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
    /// Standard error across seeds; empty for a single run.
    pub std_err: Vec<f64>,
}

impl SmoothedCurve {
    pub fn of_run(log: &RunLog, half_life: f64) -> Result<Self> {
        let smoothed = exp_smooth(&log.rewards(), half_life)?;
        let steps = checkpoints(smoothed.len());
        let values = steps.iter().map(|&t| smoothed[t - 1]).collect();
        Ok(Self {
            steps,
            values,
            std_err: Vec::new(),
        })
    }

    /// Pointwise mean and standard error of curves on the same checkpoints.
    pub fn mean_of(curves: &[SmoothedCurve]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::InvalidInput("no curves to average".into()))?;
        if curves.iter().any(|c| c.steps != first.steps) {
            return Err(Error::Dimension("curves have different checkpoints".into()));
        }
        let (values, std_err) = (0..first.steps.len())
            .map(|i| {
                let xs: Vec<f64> = curves.iter().map(|c| c.values[i]).collect();
                mean_and_se(&xs)
            })
            .unzip();
        Ok(Self {
            steps: first.steps.clone(),
            values,
            std_err,
        })
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// One line of the per-seed CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub step: usize,
    #[serde(serialize_with = "ser_sig9")]
    pub reward: f64,
    #[serde(serialize_with = "ser_sig9")]
    pub smoothed_reward: f64,
    #[serde(serialize_with = "ser_flag", deserialize_with = "de_flag")]
    pub replanned: bool,
}

/// `x` rounded to nine significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Shortest decimal of `x` after rounding to nine significant digits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{}", round_sig9(x))
}

fn ser_sig9<S: serde::Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_sig9(*x))
}

fn ser_flag<S: serde::Serializer>(x: &bool, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_u8(u8::from(*x))
}

fn de_flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(serde::de::Error::custom(format!("replanned must be 0 or 1, got {v}"))),
    }
}

pub fn write_csv<W: std::io::Write>(rows: &[CsvRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["seed", "step", "reward", "smoothed_reward", "replanned"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Per-seed logs and their curves.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunLog>,
    pub curves: Vec<SmoothedCurve>,
    pub aggregate: SmoothedCurve,
}

impl ExperimentResult {
    /// All seeds' rows, in seed-list order.
    pub fn csv_rows(&self, half_life: f64) -> Result<Vec<CsvRow>> {
        let mut rows = Vec::new();
        for run in &self.runs {
            rows.extend(run.csv_rows(half_life)?);
        }
        Ok(rows)
    }
}

/// Runs every seed of the experiment on the rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect::<Result<Vec<_>>>()?;
    let curves = runs
        .iter()
        .map(|r| SmoothedCurve::of_run(r, config.half_life))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = SmoothedCurve::mean_of(&curves)?;
    Ok(ExperimentResult {
        runs,
        curves,
        aggregate,
    })
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunLog> {
    if config.environment.is_discrete() {
        let mut run = DiscreteRun::new(config, seed)?;
        for _ in 0..config.steps {
            run.step()?;
        }
        Ok(run.into_log())
    } else {
        let mut run = ContinuousRun::new(config, seed)?;
        for _ in 0..config.steps {
            run.step()?;
        }
        Ok(run.into_log())
    }
}

/// Writes `<stem>_seed<k>.csv` per seed, the merged `<stem>.csv` and the
/// mean curve `<stem>_aggregate.csv`; returns the merged path.
pub fn write_outputs(config: &ExperimentConfig, result: &ExperimentResult) -> Result<PathBuf> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let stem = format!("{}_{}", config.environment.as_str(), config.algorithm);
    let mut merged = Vec::new();
    for run in &result.runs {
        let rows = run.csv_rows(config.half_life)?;
        write_csv(&rows, fs::File::create(dir.join(format!("{stem}_seed{}.csv", run.seed)))?)?;
        merged.extend(rows);
        if config.verbose && !run.diagnostics.is_empty() {
            let mut f = fs::File::create(dir.join(format!("{stem}_seed{}_plans.jsonl", run.seed)))?;
            for line in &run.diagnostics {
                writeln!(f, "{line}")?;
            }
        }
    }
    let merged_path = dir.join(format!("{stem}.csv"));
    write_csv(&merged, fs::File::create(&merged_path)?)?;
    write_aggregate(&result.aggregate, fs::File::create(dir.join(format!("{stem}_aggregate.csv")))?)?;
    Ok(merged_path)
}

pub fn write_aggregate<W: std::io::Write>(curve: &SmoothedCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "mean_smoothed_reward", "std_error"])?;
    for (i, t) in curve.steps.iter().enumerate() {
        let se = curve.std_err.get(i).copied().unwrap_or(0.0);
        w.write_record([t.to_string(), fmt_sig9(curve.values[i]), fmt_sig9(se)])?;
    }
    w.flush()?;
    Ok(())
}

/// Re-smooths the rewards of a CSV file with a new half-life, per seed.
pub fn resmooth_csv(path: &Path, half_life: f64) -> Result<Vec<CsvRow>> {
    let mut rows = read_csv(fs::File::open(path)?)?;
    let mut start = 0;
    while start < rows.len() {
        let seed = rows[start].seed;
        let end = start + rows[start..].iter().take_while(|r| r.seed == seed).count();
        let rewards: Vec<f64> = rows[start..end].iter().map(|r| r.reward).collect();
        for (row, y) in rows[start..end].iter_mut().zip(exp_smooth(&rewards, half_life)?) {
            row.smoothed_reward = round_sig9(y);
        }
        start = end;
    }
    Ok(rows)
}

/// Current decision rule of a discrete agent.
#[derive(Debug, Clone)]
enum DiscreteRule {
    Random,
    Policy(StationaryPolicy),
}

/// A discrete agent interacting with its environment one step at a time.
pub struct DiscreteRun {
    algorithm: AlgorithmId,
    planner: PlannerConfig,
    schedule: super::config::ReplanSchedule,
    verbose: bool,
    env: Box<dyn DiscreteEnvironment>,
    posterior: DirichletNormalGammaPosterior,
    rule: DiscreteRule,
    rng: Rng,
    log: RunLog,
}

impl DiscreteRun {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let env = make_discrete(config.environment, seed)?;
        let planner = config.planner();
        let posterior = DirichletNormalGammaPosterior::prior(
            env.n_states(),
            env.n_actions(),
            config.dirichlet_prior,
            NormalGamma::DEFAULT_PRIOR,
            planner.gamma,
        )?
        .with_reward_sampling(config.reward_sampling);
        Ok(Self {
            algorithm: config.algorithm,
            planner,
            schedule: config.replan_schedule,
            verbose: config.verbose,
            env,
            posterior,
            rule: DiscreteRule::Random,
            rng: seeded_rng(seed, AGENT_STREAM),
            log: RunLog {
                seed,
                ..RunLog::default()
            },
        })
    }

    pub fn t(&self) -> usize {
        self.log.records.len()
    }

    pub fn posterior(&self) -> &DirichletNormalGammaPosterior {
        &self.posterior
    }

    pub fn env(&self) -> &dyn DiscreteEnvironment {
        self.env.as_ref()
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    fn replan(&mut self) -> Result<()> {
        let rng = &mut self.rng;
        self.rule = match self.algorithm {
            AlgorithmId::Random => DiscreteRule::Random,
            AlgorithmId::Psrl => DiscreteRule::Policy(psrl_plan(&self.posterior, rng)),
            AlgorithmId::Mmbi => {
                let p = mmbi_plan(&self.posterior, self.planner.n_mdp_samples, self.planner.lookahead, rng)?;
                DiscreteRule::Policy(p.first().clone())
            }
            AlgorithmId::Bbi | AlgorithmId::MeanFieldBbi => {
                let plan = bbi_plan(&self.posterior, &self.planner, self.env.reward_bounds(), rng)?;
                if self.verbose {
                    self.log.diagnostics.push(plan.diagnostics_json()?);
                }
                DiscreteRule::Policy(plan.policy.first().clone())
            }
        };
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let t = self.t() + 1;
        if self.schedule.is_replan(t) {
            self.replan()?;
            self.log.replans.push(t);
        }
        let state = self.env.state();
        let action = match &self.rule {
            DiscreteRule::Random => self.rng.random_range(0..self.env.n_actions()),
            DiscreteRule::Policy(p) => p.sample_action(state, &mut self.rng),
        };
        let out = self.env.step(action)?;
        self.posterior.update(&Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.next_state,
        })?;
        if out.terminal {
            self.log.episode_ends.push(t);
        }
        self.log.push(StepRecord {
            t,
            state: StateRecord::Discrete(state),
            action,
            reward: out.reward,
        })
    }
}

enum ContinuousRule {
    Random,
    Plan(ContinuousPlan),
}

/// A continuous agent; resets the environment after every terminal step.
pub struct ContinuousRun {
    algorithm: AlgorithmId,
    planner: PlannerConfig,
    schedule: super::config::ReplanSchedule,
    env: Box<dyn ContinuousEnvironment>,
    posterior: BayesLinRegPosterior,
    history: Vec<DVector<f64>>,
    rule: ContinuousRule,
    rng: Rng,
    log: RunLog,
}

impl ContinuousRun {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let env = make_continuous(config.environment, seed)?;
        let planner = config.planner();
        let posterior = BayesLinRegPosterior::prior(
            env.n_actions(),
            env.n_model_features(),
            env.state_dim(),
            LinRegPrior::default(),
            planner.gamma,
        )?;
        Ok(Self {
            algorithm: config.algorithm,
            planner,
            schedule: config.replan_schedule,
            env,
            posterior,
            history: Vec::new(),
            rule: ContinuousRule::Random,
            rng: seeded_rng(seed, AGENT_STREAM),
            log: RunLog {
                seed,
                ..RunLog::default()
            },
        })
    }

    pub fn t(&self) -> usize {
        self.log.records.len()
    }

    pub fn posterior(&self) -> &BayesLinRegPosterior {
        &self.posterior
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_log(self) -> RunLog {
        self.log
    }

    /// The plan in force, if the agent plans at all.
    pub fn current_plan(&self) -> Option<&ContinuousPlan> {
        match &self.rule {
            ContinuousRule::Plan(p) => Some(p),
            ContinuousRule::Random => None,
        }
    }

    fn replan(&mut self) -> Result<()> {
        self.rule = match self.algorithm {
            AlgorithmId::Bbi | AlgorithmId::MeanFieldBbi => ContinuousRule::Plan(bbi_plan_continuous(
                &self.posterior,
                self.env.as_ref(),
                &self.history,
                &self.planner,
                &mut self.rng,
            )?),
            AlgorithmId::Random => ContinuousRule::Random,
            other => {
                return Err(Error::Config(format!("{other} has no continuous variant")));
            }
        };
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let t = self.t() + 1;
        if self.schedule.is_replan(t) {
            self.replan()?;
            self.log.replans.push(t);
        }
        let state = self.env.state().clone();
        let action = match &self.rule {
            ContinuousRule::Random => self.rng.random_range(0..self.env.n_actions()),
            ContinuousRule::Plan(p) => p.act(&self.env.features(&state)),
        };
        let out = self.env.step(action)?;
        self.posterior
            .update(&self.env.model_features(&state), action, out.reward, &out.next_state)?;
        self.history.push(state.clone());
        if out.terminal {
            self.log.episode_ends.push(t);
            self.env.reset();
        }
        self.log.push(StepRecord {
            t,
            state: StateRecord::Continuous(state.iter().copied().collect()),
            action,
            reward: out.reward,
        })
    }
}

/// Steps survived in each of `episodes` episodes, capped at `max_steps`.
pub fn episode_lengths<F>(
    env: &mut dyn ContinuousEnvironment,
    mut act: F,
    episodes: usize,
    max_steps: usize,
) -> Result<Vec<usize>>
where
    F: FnMut(&dyn ContinuousEnvironment, &DVector<f64>) -> usize,
{
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.reset();
        let mut n = 0;
        while n < max_steps {
            let a = act(&*env, &s);
            let r = env.step(a)?;
            n += 1;
            if r.terminal {
                break;
            }
            s = r.next_state;
        }
        out.push(n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;
    use crate::harness::config::ReplanSchedule;

    fn quick(env: EnvId, alg: AlgorithmId, steps: usize) -> ExperimentConfig {
        ExperimentConfig {
            steps,
            seeds: vec![3, 4],
            lookahead: Some(10),
            n_value_samples: Some(10),
            ..ExperimentConfig::new(env, alg)
        }
    }

    #[test]
    fn checkpoint_cadence() {
        let c = checkpoints(1250);
        assert_eq!(c.len(), 1000 + 2 + 1);
        assert_eq!(&c[998..], &[999, 1000, 1100, 1200, 1250]);
        assert_eq!(checkpoints(1200).last(), Some(&1200));
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(2.0), "2");
        assert_eq!(fmt_sig9(123456789012.0), "123456789000");
        assert_eq!(round_sig9(round_sig9(0.1 + 0.2)), round_sig9(0.1 + 0.2));
    }

    #[test]
    fn replans_follow_schedule() {
        let cfg = quick(EnvId::Nchain, AlgorithmId::Psrl, 30);
        let log = run_seed(&cfg, 0).unwrap();
        assert_eq!(log.replans, vec![1, 3, 6, 10, 15, 21, 28]);
        let cfg = ExperimentConfig {
            replan_schedule: ReplanSchedule::Every(10),
            ..cfg
        };
        assert_eq!(run_seed(&cfg, 0).unwrap().replans, vec![1, 11, 21]);
    }

    #[test]
    fn csv_round_trip_and_flags() {
        let cfg = quick(EnvId::Nchain, AlgorithmId::Bbi, 60);
        let res = run_experiment(&cfg).unwrap();
        let rows = res.csv_rows(cfg.half_life).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seed,step,reward,smoothed_reward,replanned\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
        let flagged: Vec<usize> = rows.iter().filter(|r| r.seed == 3 && r.replanned).map(|r| r.step).collect();
        assert_eq!(flagged, vec![1, 3, 6, 10, 15, 21, 28, 36, 45, 55]);
    }

    #[test]
    fn aggregate_is_pointwise_mean() {
        let cfg = quick(EnvId::Doubleloop, AlgorithmId::Random, 200);
        let res = run_experiment(&cfg).unwrap();
        for (i, v) in res.aggregate.values.iter().enumerate() {
            let mean = (res.curves[0].values[i] + res.curves[1].values[i]) / 2.0;
            assert!((v - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for alg in [AlgorithmId::Bbi, AlgorithmId::Mmbi, AlgorithmId::Psrl] {
            let cfg = quick(EnvId::Nchain, alg, 80);
            let a = run_experiment(&cfg).unwrap().csv_rows(1000.0).unwrap();
            let b = run_experiment(&cfg).unwrap().csv_rows(1000.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn continuous_run_resets_after_failure() {
        let cfg = ExperimentConfig {
            n_probe_states: Some(8),
            ..quick(EnvId::InvertedPendulum, AlgorithmId::Random, 300)
        };
        let log = run_seed(&cfg, 1).unwrap();
        assert_eq!(log.records.len(), 300);
        assert!(!log.episode_ends.is_empty());
        assert_eq!(log.episode_lengths().iter().sum::<usize>(), *log.episode_ends.last().unwrap());
    }

    #[test]
    fn resmoothing_matches_original() {
        let cfg = quick(EnvId::Nchain, AlgorithmId::Random, 500);
        let res = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&res.csv_rows(10.0).unwrap(), fs::File::create(&path).unwrap()).unwrap();
        let again = resmooth_csv(&path, 10.0).unwrap();
        assert_eq!(again, read_csv(fs::File::open(&path).unwrap()).unwrap());
    }

    #[test]
    fn log_rejects_gaps() {
        let mut log = RunLog::default();
        let rec = |t| StepRecord {
            t,
            state: StateRecord::Discrete(0),
            action: 0,
            reward: 0.0,
        };
        log.push(rec(1)).unwrap();
        assert!(log.push(rec(3)).is_err());
    }
}
