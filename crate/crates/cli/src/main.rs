use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use bbi_core::env::EnvId;
use bbi_core::harness::config::load_toml_or_default;
use bbi_core::harness::runner::{fmt_sig9, resmooth_csv, write_csv, write_outputs};
use bbi_core::harness::studies::{
    bayes_bound_experiment, pendulum_study, posterior_quality_experiment, BayesBoundStudyConfig,
    PendulumStudyConfig, PosteriorStudyConfig, Projection,
};
use bbi_core::harness::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "bbi", version, about = "Bayesian backwards induction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides `seeds`, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Also write plan diagnostics as JSON lines.
        #[arg(long)]
        verbose: bool,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Distances of value-belief estimates to the Monte-Carlo truth on NChain.
    PosteriorEval {
        /// Study settings; flags override them.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// Average the distance over all states instead of the start state.
        #[arg(long)]
        state_average: bool,
        /// CSV destination; standard output by default.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// BBI's value belief against the Monte-Carlo Bayes upper bound.
    BayesBound {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        env: Option<EnvId>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        n_bound_samples: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Steps survived on the inverted pendulum by frozen BBI policies.
    Pendulum {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-smooth the rewards of a run CSV with another half-life.
    Smooth {
        input: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        half_life: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            output_dir,
            steps,
            seeds,
            verbose,
            print_config,
        } => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            if let Some(n) = steps {
                cfg.steps = n;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            cfg.verbose |= verbose;
            cfg.validate()?;
            if print_config {
                print!("{}", cfg.to_toml()?);
                return Ok(());
            }
            let result = run_experiment(&cfg)?;
            let path = write_outputs(&cfg, &result)?;
            eprintln!(
                "{} on {}: final mean smoothed reward {} over {} seeds, written to {}",
                cfg.algorithm,
                cfg.environment.as_str(),
                fmt_sig9(result.aggregate.last().unwrap_or(f64::NAN)),
                cfg.seeds.len(),
                path.display()
            );
        }
        Command::PosteriorEval {
            config,
            seed,
            repetitions,
            checkpoints,
            state_average,
            output,
        } => {
            let mut cfg: PosteriorStudyConfig = load_toml_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = repetitions {
                cfg.repetitions = r;
            }
            if let Some(c) = checkpoints {
                cfg.checkpoints = c;
            }
            if state_average {
                cfg.projection = Projection::StateAverage;
            }
            let rows = posterior_quality_experiment(&cfg)?;
            let mut text = String::from("checkpoint,inferential,mean_mdp\n");
            for r in rows {
                text += &format!("{},{},{}\n", r.checkpoint, fmt_sig9(r.inferential), fmt_sig9(r.mean_mdp));
            }
            emit(output.as_deref(), &text)?;
        }
        Command::BayesBound {
            config,
            env,
            steps,
            checkpoints,
            seeds,
            n_bound_samples,
            output,
        } => {
            let mut cfg: BayesBoundStudyConfig = load_toml_or_default(config.as_deref())?;
            if let Some(e) = env {
                cfg.environment = e;
            }
            if let Some(s) = steps {
                cfg.steps = s;
                cfg.checkpoints.retain(|&c| c <= s);
            }
            if let Some(c) = checkpoints {
                cfg.checkpoints = c;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(n) = n_bound_samples {
                cfg.n_bound_samples = n;
            }
            let points = bayes_bound_experiment(&cfg)?;
            let mut text = String::from("seed,step,bbi_value,bound,bound_std_err\n");
            for p in points {
                text += &format!(
                    "{},{},{},{},{}\n",
                    p.seed,
                    p.step,
                    fmt_sig9(p.bbi_value),
                    fmt_sig9(p.bound),
                    fmt_sig9(p.bound_std_err)
                );
            }
            emit(output.as_deref(), &text)?;
        }
        Command::Pendulum { config, seeds, output } => {
            let mut cfg: PendulumStudyConfig = load_toml_or_default(config.as_deref())?;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let study = pendulum_study(&cfg)?;
            let mut text = String::from("seed,step,mean_steps_survived\n");
            for (seed, row) in cfg.seeds.iter().zip(&study.survival) {
                for (step, v) in cfg.checkpoints.iter().zip(row) {
                    text += &format!("{seed},{step},{}\n", fmt_sig9(*v));
                }
            }
            emit(output.as_deref(), &text)?;
            eprintln!("random policy survives {} steps on average", fmt_sig9(study.random_baseline));
        }
        Command::Smooth {
            input,
            half_life,
            output,
        } => {
            if !(half_life > 0.0) {
                bail!("half-life must be positive");
            }
            let rows = resmooth_csv(&input, half_life)
                .with_context(|| format!("reading {}", input.display()))?;
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf)?;
            emit(output.as_deref(), std::str::from_utf8(&buf)?)?;
        }
    }
    Ok(())
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
