//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! Run with `cargo test -p bbi-core --test acceptance -- --nocapture`.

use std::io::Write as _;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use bbi_core::env::{make_continuous, make_discrete, DiscreteEnvironment, EnvId, NChain};
use bbi_core::harness::runner::write_csv;
use bbi_core::harness::studies::{
    bayes_bound_experiment, pendulum_study, posterior_quality_experiment, BayesBoundStudyConfig,
    PendulumStudyConfig, PosteriorStudyConfig,
};
use bbi_core::harness::{mean_and_se, run_experiment, AlgorithmId, ExperimentConfig};
use bbi_core::inference::{
    compute_weights, fitted_q_belief, generate_utility_samples, LikelihoodScale, ValueBeliefGaussian,
};
use bbi_core::mdp::{
    average_reward, backwards_induction, bellman_backup, exact_optimal, exact_policy_value,
    q_values, DiscreteMdp, StationaryPolicy,
};
use bbi_core::planners::{bbi_plan_continuous, bbi_plan_with_mdps, mmbi_plan_with_mdps, PlannerConfig};
use bbi_core::posterior::conjugacy::{dirichlet_grid_check, normal_gamma_grid_check};
use bbi_core::posterior::{BayesLinRegPosterior, LinRegPrior, Transition};
use bbi_core::{seeded_rng, DirichletNormalGammaPosterior, Error, NormalGamma};

/// The checks are timed, so they take turns rather than share the CPU.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, pass: bool, started: Instant, detail: String) {
    // Written past the harness's capture so passing checks show up too.
    let line = format!(
        "{} {name} ({:.1}s): {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    drop(out);
    assert!(pass, "{name}: {detail}");
}

const DISCRETE: [EnvId; 5] = [
    EnvId::Nchain,
    EnvId::Doubleloop,
    EnvId::LavaLake5x7,
    EnvId::LavaLake10x10,
    EnvId::Maze,
];

/// A posterior after `steps` uniformly random steps.
fn explored_posterior(id: EnvId, steps: usize, seed: u64) -> (DirichletNormalGammaPosterior, Box<dyn DiscreteEnvironment>) {
    let mut env = make_discrete(id, seed).unwrap();
    let mut post = DirichletNormalGammaPosterior::default_prior(env.n_states(), env.n_actions(), 0.99).unwrap();
    let mut rng = seeded_rng(seed, 7);
    for _ in 0..steps {
        let s = env.state();
        let a = rng.random_range(0..env.n_actions());
        let out = env.step(a).unwrap();
        post.update(&Transition { state: s, action: a, reward: out.reward, next_state: out.next_state })
            .unwrap();
    }
    (post, env)
}

fn weights_ok(w: &DMatrix<f64>) -> Option<f64> {
    if w.iter().any(|&x| !(x >= 0.0)) {
        return None;
    }
    Some((0..w.ncols()).map(|k| (w.column(k).sum() - 1.0).abs()).fold(0.0, f64::max))
}

#[test]
fn weights_normalize_on_random_fixtures() {
    let _serial = serial();
    let started = Instant::now();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    let mut rng = seeded_rng(11, 0);
    for (e, &id) in DISCRETE.iter().enumerate() {
        for f in 0..160u64 {
            let (post, env) = explored_posterior(id, rng.random_range(0..300), 1000 * e as u64 + f);
            let n_s = env.n_states();
            let n_m = rng.random_range(2..=12);
            let n_v = rng.random_range(1..=40);
            let mdps: Vec<DiscreteMdp> = (0..n_m).map(|_| post.sample_mdp(&mut rng)).collect();
            let spread = 10f64.powf(rng.random_range(-2.0..2.5));
            let a = DMatrix::from_fn(n_s, 3, |_, _| rng.random_range(-1.0..1.0) * spread);
            let belief = ValueBeliefGaussian {
                mean: DVector::from_fn(n_s, |_, _| rng.random_range(-50.0..300.0)),
                covariance: &a * a.transpose(),
            };
            let policy = StationaryPolicy::new(
                n_s,
                env.n_actions(),
                (0..n_s)
                    .flat_map(|_| {
                        let p: Vec<f64> = (0..env.n_actions()).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let z: f64 = p.iter().sum();
                        p.into_iter().map(move |x| x / z)
                    })
                    .collect(),
            )
            .unwrap();
            let probes: Vec<usize> = (0..rng.random_range(1..=n_s.min(40))).map(|_| rng.random_range(0..n_s)).collect();
            let values = belief.sample(n_v, &mut rng).unwrap();
            let utilities = generate_utility_samples(&mdps, &policy, &belief, &probes, 10, &mut rng).unwrap();
            let span = bbi_core::env::value_span(env.reward_bounds(), 0.99);
            let mut scale = LikelihoodScale::from_span(span, 10f64.powf(rng.random_range(-7.0..-1.0))).unwrap();
            let w = loop {
                match compute_weights(&values, &utilities, scale) {
                    Ok(w) => break w,
                    Err(Error::UnstableWeights { .. }) => scale = scale.doubled(),
                    Err(err) => panic!("{err}"),
                }
            };
            match weights_ok(&w) {
                Some(dev) => worst = worst.max(dev),
                None => negative += 1,
            }
            checked += 1;
        }
    }
    for (e, id) in [EnvId::LinearModel, EnvId::InvertedPendulum].into_iter().enumerate() {
        let env = make_continuous(id, 5).unwrap();
        for f in 0..20u64 {
            let mut post = BayesLinRegPosterior::prior(
                env.n_actions(),
                env.n_model_features(),
                env.state_dim(),
                LinRegPrior::default(),
                0.99,
            )
            .unwrap();
            let mut sim = make_continuous(id, 100 * e as u64 + f).unwrap();
            let mut history = Vec::new();
            for _ in 0..rng.random_range(0..200) {
                let s = sim.state().clone();
                let a = rng.random_range(0..sim.n_actions());
                let out = sim.step(a).unwrap();
                post.update(&sim.model_features(&s), a, out.reward, &out.next_state).unwrap();
                history.push(s);
                if out.terminal {
                    sim.reset();
                }
            }
            let cfg = PlannerConfig {
                lookahead: 8,
                n_value_samples: rng.random_range(1..=20),
                n_mdp_samples: rng.random_range(2..=10),
                n_probe_states: rng.random_range(1..=20),
                ..PlannerConfig::continuous()
            };
            let plan = bbi_plan_continuous(&post, env.as_ref(), &history, &cfg, &mut rng).unwrap();
            for w in &plan.weights {
                match weights_ok(w) {
                    Some(dev) => worst = worst.max(dev),
                    None => negative += 1,
                }
                checked += 1;
            }
        }
    }
    let pass = checked >= 1000 && negative == 0 && worst <= 1e-9 && started.elapsed().as_secs() < 60;
    report(
        "weight normalization",
        pass,
        started,
        format!("{checked} fixtures, max |Σ_j w_jk − 1| = {worst:.2e}, {negative} with negative weights"),
    );
}

fn random_mdp(n_s: usize, n_a: usize, gamma: f64, rng: &mut impl rand::Rng) -> DiscreteMdp {
    let mut p = Vec::with_capacity(n_s * n_a * n_s);
    for _ in 0..n_s * n_a {
        let row: Vec<f64> = (0..n_s).map(|_| rng.random::<f64>()).collect();
        let z: f64 = row.iter().sum();
        p.extend(row.iter().map(|x| x / z));
    }
    let r: Vec<f64> = (0..n_s * n_a).map(|_| rng.random_range(-1.0..1.0)).collect();
    DiscreteMdp::from_tables(n_s, n_a, &p, &r, gamma).unwrap()
}

fn deterministic_policies(n_s: usize, n_a: usize) -> Vec<StationaryPolicy> {
    (0..n_a.pow(n_s as u32))
        .map(|mut code| {
            let actions: Vec<usize> = (0..n_s)
                .map(|_| {
                    let a = code % n_a;
                    code /= n_a;
                    a
                })
                .collect();
            StationaryPolicy::deterministic(&actions, n_a).unwrap()
        })
        .collect()
}

#[test]
fn dynamic_programming_oracles() {
    let _serial = serial();
    let started = Instant::now();
    let tol = 1e-7;
    let mut rng = seeded_rng(3, 0);
    let mut worst_contraction = f64::NEG_INFINITY;
    let mut worst_fixed_point: f64 = 0.0;
    let nchain = NChain::new(0).as_mdp(0.99);
    let mut mdps = vec![nchain.clone()];
    mdps.extend((0..20).map(|i| random_mdp(2 + i % 6, 2 + i % 3, 0.9, &mut rng)));
    for mdp in &mdps {
        let n_s = mdp.n_states();
        let policies = deterministic_policies(n_s.min(5), mdp.n_actions());
        for _ in 0..20 {
            let u = DVector::from_fn(n_s, |_, _| rng.random_range(-100.0..100.0));
            let v = DVector::from_fn(n_s, |_, _| rng.random_range(-100.0..100.0));
            let bound = mdp.discount() * (&u - &v).amax();
            let opt = |x: &DVector<f64>| {
                let q = q_values(mdp, x).unwrap();
                DVector::from_fn(n_s, |s, _| q.row(s).max())
            };
            worst_contraction = worst_contraction.max((opt(&u) - opt(&v)).amax() - bound);
            if n_s <= 5 {
                let pi = &policies[rng.random_range(0..policies.len())];
                let d = (bellman_backup(mdp, pi, &u).unwrap() - bellman_backup(mdp, pi, &v).unwrap()).amax();
                worst_contraction = worst_contraction.max(d - bound);
            }
        }
        let (pi_star, v_star) = exact_optimal(mdp);
        let v_pi = exact_policy_value(mdp, &pi_star).unwrap();
        worst_fixed_point = worst_fixed_point
            .max((bellman_backup(mdp, &pi_star, &v_pi).unwrap() - &v_pi).amax())
            .max((&v_pi - &v_star).amax());
    }

    let (_, v_star) = exact_optimal(&nchain);
    let all = deterministic_policies(5, 2);
    let best = all
        .iter()
        .map(|p| exact_policy_value(&nchain, p).unwrap())
        .fold(DVector::from_element(5, f64::NEG_INFINITY), |acc, v| acc.sup(&v));
    let enum_gap = (&best - &v_star).amax();
    let pass = all.len() == 32
        && worst_contraction <= tol
        && worst_fixed_point <= tol
        && enum_gap <= tol
        && started.elapsed().as_secs() < 10;
    report(
        "dynamic programming oracles",
        pass,
        started,
        format!(
            "contraction excess {worst_contraction:.2e}, fixed-point residual {worst_fixed_point:.2e}, \
             32-policy enumeration gap {enum_gap:.2e}"
        ),
    );
}

#[test]
fn conjugate_posteriors_match_grid_bayes() {
    let _serial = serial();
    let started = Instant::now();
    let mut rng = seeded_rng(5, 0);
    let outcomes: Vec<usize> = (0..25).map(|_| usize::from(rng.random::<f64>() < 0.3)).collect();
    let dir = dirichlet_grid_check([0.5, 0.5], &outcomes, 4000);
    let dir_flat = dirichlet_grid_check([1.0, 2.0], &outcomes[..5], 4000);
    let rewards: Vec<f64> = (0..15).map(|_| 1.5 + rng.random_range(-1.0..1.0)).collect();
    let ng = normal_gamma_grid_check(NormalGamma::DEFAULT_PRIOR, &rewards, 800);
    let ng_few = normal_gamma_grid_check(NormalGamma::new(0.5, 2.0, 2.0, 1.0).unwrap(), &rewards[..3], 800);
    let worst = [dir, dir_flat, ng, ng_few].iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let pass = worst <= 1e-3 && started.elapsed().as_secs() < 60;
    report(
        "conjugacy against grid Bayes",
        pass,
        started,
        format!("max relative density error {worst:.2e}"),
    );
}

#[test]
fn degenerate_planners_coincide() {
    let _serial = serial();
    let started = Instant::now();
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for (e, &id) in DISCRETE[..3].iter().enumerate() {
        for seed in 0..4u64 {
            let (post, env) = explored_posterior(id, 200 * seed as usize, seed + 10 * e as u64);
            let mut rng = seeded_rng(seed, 1);
            let mdp = post.sample_mdp(&mut rng);
            let psrl = exact_optimal(&mdp).0;
            let cfg = PlannerConfig { lookahead: 3000, ..PlannerConfig::discrete() };
            let bbi = bbi_plan_with_mdps(&[mdp.clone()], &cfg, env.reward_bounds(), &mut rng).unwrap();
            if bbi.policy.first().actions() != psrl.actions() {
                mismatches.push(format!("BBI vs PSRL on {} seed {seed}", id.as_str()));
            }
            let mmbi = mmbi_plan_with_mdps(&[mdp.clone()], 50).unwrap();
            let (bi, _) = backwards_induction(&mdp, 50).unwrap();
            if mmbi != bi {
                mismatches.push(format!("MMBI vs backwards induction on {} seed {seed}", id.as_str()));
            }
            cases += 1;
        }
    }
    let pass = mismatches.is_empty() && started.elapsed().as_secs() < 60;
    report(
        "single-sample degeneracy",
        pass,
        started,
        format!("{cases} posteriors, mismatches: {mismatches:?}"),
    );
}

#[test]
fn posterior_quality_table() {
    let _serial = serial();
    let started = Instant::now();
    let rows = posterior_quality_experiment(&PosteriorStudyConfig::default()).unwrap();
    let ii: Vec<f64> = rows.iter().map(|r| r.inferential).collect();
    let mm: Vec<f64> = rows.iter().map(|r| r.mean_mdp).collect();
    let paper_ii = [22.80, 16.41, 4.18];
    let paper_mm = [30.69, 17.90, 4.27];
    let decreasing = ii.windows(2).all(|w| w[1] < w[0]);
    let beats_mean = ii[0] <= mm[0];
    let within = |xs: &[f64], ps: &[f64]| xs.iter().zip(ps).all(|(x, p)| (x - p).abs() <= 0.5 * p);
    let magnitudes = within(&ii, &paper_ii) && within(&mm, &paper_mm);
    report(
        "posterior quality",
        decreasing && beats_mean && magnitudes,
        started,
        format!(
            "inferential {ii:.2?} (ref {paper_ii:?}), mean MDP {mm:.2?} (ref {paper_mm:?}); \
             decreasing={decreasing}, beats mean MDP at first checkpoint={beats_mean}, within ±50%={magnitudes}"
        ),
    );
}

#[test]
fn bbi_value_approaches_bayes_bound() {
    let _serial = serial();
    let started = Instant::now();
    let cfg = BayesBoundStudyConfig::default();
    let points = bayes_bound_experiment(&cfg).unwrap();
    let violations: Vec<String> = points
        .iter()
        .filter(|p| p.bbi_value > p.bound + 2.0 * p.bound_std_err)
        .map(|p| format!("seed {} step {}: {:.2} > {:.2} + 2·{:.2}", p.seed, p.step, p.bbi_value, p.bound, p.bound_std_err))
        .collect();
    let gaps = |step: usize| -> Vec<f64> { points.iter().filter(|p| p.step == step).map(|p| p.gap()).collect() };
    let (early, early_se) = mean_and_se(&gaps(100));
    let (late, late_se) = mean_and_se(&gaps(10_000));
    // The shrinkage must be larger than the combined noise of the two means.
    let shrinks = early - late > 2.0 * (early_se.powi(2) + late_se.powi(2)).sqrt();
    report(
        "Bayes bound",
        violations.is_empty() && shrinks,
        started,
        format!(
            "gap at 100 steps {early:.2} ± {early_se:.2}, at 10^4 steps {late:.2} ± {late_se:.2}; violations {violations:?}"
        ),
    );
}

fn final_reward(env: EnvId, alg: AlgorithmId, steps: usize, seeds: u64, lookahead: Option<usize>) -> f64 {
    let cfg = ExperimentConfig {
        steps,
        seeds: (0..seeds).collect(),
        lookahead,
        ..ExperimentConfig::new(env, alg)
    };
    run_experiment(&cfg).unwrap().aggregate.last().unwrap()
}

#[test]
fn reward_parity_with_baselines() {
    let _serial = serial();
    let started = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for env in [EnvId::Nchain, EnvId::Doubleloop] {
        let mdp = make_discrete(env, 0).unwrap().as_mdp(0.99);
        let random = average_reward(&mdp, &StationaryPolicy::uniform(mdp.n_states(), mdp.n_actions())).unwrap();
        let bbi = final_reward(env, AlgorithmId::Bbi, 100_000, 10, None);
        let psrl = final_reward(env, AlgorithmId::Psrl, 100_000, 10, None);
        let mmbi = final_reward(env, AlgorithmId::Mmbi, 100_000, 10, None);
        let close = |other: f64| (bbi - other).abs() <= 0.1 * other.abs();
        let above = [bbi, psrl, mmbi].iter().all(|&x| x >= 1.3 * random);
        pass &= close(psrl) && close(mmbi) && above;
        detail.push(format!(
            "{}: BBI {bbi:.3}, PSRL {psrl:.3}, MMBI {mmbi:.3}, random {random:.4}",
            env.as_str()
        ));
    }
    report("reward parity", pass, started, detail.join("; "));
}

#[test]
fn horizon_insensitivity() {
    let _serial = serial();
    let started = Instant::now();
    let finals: Vec<f64> = [10, 20, 50, 100]
        .into_iter()
        .map(|t| final_reward(EnvId::Nchain, AlgorithmId::Bbi, 10_000, 5, Some(t)))
        .collect();
    let hi = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = finals.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        "horizon insensitivity",
        hi - lo <= 0.15 * hi,
        started,
        format!("final smoothed reward for T = 10, 20, 50, 100: {finals:.3?}"),
    );
}

#[test]
fn continuous_pipeline() {
    let _serial = serial();
    let started = Instant::now();
    let mut rng = seeded_rng(9, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..60);
        let f = rng.random_range(1..12);
        let x = DMatrix::from_fn(n, f, |_, _| rng.random_range(-2.0..2.0));
        let q = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let w = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let lambda = 10f64.powf(rng.random_range(-3.0..1.0));
        let fit = fitted_q_belief(&x, &q, &w, lambda).unwrap();
        let wx = DMatrix::from_fn(n, f, |i, j| w[i] * x[(i, j)]);
        let lhs = (x.transpose() * &wx + DMatrix::identity(f, f) * lambda) * &fit.omega;
        let rhs = wx.transpose() * &q;
        worst = worst.max((lhs - &rhs).amax() / (1.0 + rhs.amax()));
    }

    let study = pendulum_study(&PendulumStudyConfig::default()).unwrap();
    let m = &study.mean_survival;
    let nondecreasing = m.windows(2).all(|w| w[1] >= w[0]);
    let beats = m.last().copied().unwrap_or(0.0) >= 10.0 * study.random_baseline;
    report(
        "continuous pipeline",
        worst <= 1e-8 && nondecreasing && beats,
        started,
        format!(
            "normal-equation residual {worst:.2e}; mean steps survived at 1e4/2e4/3e4 {m:.1?} vs random {:.1}",
            study.random_baseline
        ),
    );
}

#[test]
fn reruns_are_bit_identical() {
    let _serial = serial();
    let started = Instant::now();
    let mut differing = Vec::new();
    let cases = [
        (EnvId::Nchain, AlgorithmId::Bbi),
        (EnvId::Doubleloop, AlgorithmId::MeanFieldBbi),
        (EnvId::LavaLake5x7, AlgorithmId::Psrl),
        (EnvId::LavaLake10x10, AlgorithmId::Mmbi),
        (EnvId::Maze, AlgorithmId::Random),
        (EnvId::LinearModel, AlgorithmId::Bbi),
        (EnvId::InvertedPendulum, AlgorithmId::Bbi),
    ];
    for (env, alg) in cases {
        let cfg = ExperimentConfig {
            steps: 1200,
            seeds: vec![0, 7],
            lookahead: Some(10),
            n_value_samples: Some(10),
            ..ExperimentConfig::new(env, alg)
        };
        let csv = || {
            let rows = run_experiment(&cfg).unwrap().csv_rows(cfg.half_life).unwrap();
            let mut buf = Vec::new();
            write_csv(&rows, &mut buf).unwrap();
            buf
        };
        if csv() != csv() {
            differing.push(format!("{}/{alg}", env.as_str()));
        }
    }
    report(
        "determinism",
        differing.is_empty(),
        started,
        format!("{} configurations re-run, differing: {differing:?}", cases.len()),
    );
}
