use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bbi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_writes_per_seed_merged_and_aggregate_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "exp.toml",
        &format!(
            "environment = \"nchain\"\nalgorithm = \"bbi\"\nsteps = 40\nseeds = [1, 2]\nlookahead = 8\n\
             n_value_samples = 5\noutput_dir = \"{}\"\n",
            out.display()
        ),
    );
    let o = bbi(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = fs::read_to_string(out.join("nchain_bbi.csv")).unwrap();
    let mut lines = merged.lines();
    assert_eq!(lines.next(), Some("seed,step,reward,smoothed_reward,replanned"));
    assert_eq!(merged.lines().count(), 1 + 80);
    assert!(out.join("nchain_bbi_seed1.csv").exists());
    assert!(out.join("nchain_bbi_seed2.csv").exists());
    let agg = fs::read_to_string(out.join("nchain_bbi_aggregate.csv")).unwrap();
    assert!(agg.starts_with("step,mean_smoothed_reward,std_error\n"));

    // Same config, same bytes.
    let first = merged.clone();
    assert!(bbi(&["run", &cfg]).status.success());
    assert_eq!(fs::read_to_string(out.join("nchain_bbi.csv")).unwrap(), first);
}

#[test]
fn print_config_fills_in_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", "environment = \"lavalake-10x10\"\nalgorithm = \"psrl\"\n");
    let o = bbi(&["run", &cfg, "--print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for key in [
        "n_mdp_samples = 10",
        "lookahead = 100",
        "gamma = 0.99",
        "sigma_sq_factor = 0.0001",
        "n_value_samples = 20",
        "n_next_value_samples = 10",
        "half_life = 1000.0",
        "ridge_lambda = 0.01",
    ] {
        assert!(text.contains(key), "missing {key} in\n{text}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad_alg = write(dir.path(), "a.toml", "environment = \"nchain\"\nalgorithm = \"q-learning\"\n");
    let no_steps = write(dir.path(), "b.toml", "environment = \"nchain\"\nalgorithm = \"bbi\"\nsteps = 0\n");
    let bad_half = write(dir.path(), "c.toml", "environment = \"nchain\"\nalgorithm = \"bbi\"\nhalf_life = -1.0\n");
    for cfg in [bad_alg, no_steps, bad_half] {
        let o = bbi(&["run", &cfg]);
        assert!(!o.status.success());
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn smooth_rewrites_the_smoothed_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "r.csv",
        "seed,step,reward,smoothed_reward,replanned\n0,1,1,1,1\n0,2,0,1,0\n0,3,0,1,0\n5,1,4,4,1\n",
    );
    let o = bbi(&["smooth", &input, "--half-life", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "seed,step,reward,smoothed_reward,replanned\n0,1,1,1,1\n0,2,0,0.5,0\n0,3,0,0.25,0\n5,1,4,4,1\n"
    );
    assert!(!bbi(&["smooth", &input, "--half-life", "0"]).status.success());
}

#[test]
fn studies_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let study = write(
        dir.path(),
        "pq.toml",
        "checkpoints = [5, 50]\nrepetitions = 2\nn_truth_samples = 40\nn_belief_samples = 40\n\
         [method_one]\nlookahead = 30\nn_mdp_samples = 5\nn_value_samples = 8\nn_next_value_samples = 4\n\
         weight_mode = \"inferential\"\n",
    );
    let o = bbi(&["posterior-eval", "--config", &study]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("checkpoint,inferential,mean_mdp"));
    assert_eq!(text.lines().count(), 3);

    let bound = write(
        dir.path(),
        "bb.toml",
        "steps = 20\ncheckpoints = [10, 20]\nseeds = [0]\nn_bound_samples = 5\neval_lookahead = 30\n\
         [agent]\nlookahead = 5\nn_value_samples = 5\n",
    );
    let out = dir.path().join("bound.csv");
    let o = bbi(&["bayes-bound", "--config", &bound, "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out).unwrap();
    assert!(text.starts_with("seed,step,bbi_value,bound,bound_std_err\n"));
    assert_eq!(text.lines().count(), 3);
}
